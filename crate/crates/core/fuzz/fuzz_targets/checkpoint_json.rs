#![no_main]

use editlab_core::diffusion::DiffusionModel;
use editlab_core::numerics::Checkpoint;
use editlab_core::reward::RewardModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(ckpt) = Checkpoint::from_json(text) else { return };
    if let Ok(net) = ckpt.network() {
        assert_eq!(net.num_params(), ckpt.params.len());
    }
    let _ = DiffusionModel::from_checkpoint(&ckpt);
    let _ = RewardModel::from_checkpoint(&ckpt);
});
