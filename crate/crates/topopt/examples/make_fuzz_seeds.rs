//! Regenerates the checked-in fuzz corpus seeds (small valid files for each
//! binary format). Run from the repository root:
//!
//!     cargo run -p topopt --example make_fuzz_seeds

use topopt::dataset::{
    make_split, write_dataset, write_split, BcKind, Dataset, InputTensor, Sample, SampleMeta,
};
use topopt::fem::{Direction, Load, LoadCase, MeshSpec};
use topopt::nn::OptimizerConfig;
use topopt::unet::{save_checkpoint, ArchitectureConfig, TrainState};

fn main() {
    let base = std::path::Path::new("fuzz/corpus");

    // Dataset seed: 2x2 mesh, 6 channels, 2 samples.
    let mesh = MeshSpec::new(2, 2).unwrap();
    let sample = |k: f32| Sample {
        input: InputTensor::new(3, 3, 6, (0..54).map(|i| k * i as f32 * 0.125).collect()),
        target: (0..4).map(|i| 0.25 * (i + 1) as f32).collect(),
        meta: SampleMeta {
            seed: 0,
            volume_fraction: 0.5,
            loads: LoadCase {
                loads: vec![Load { node: 8, direction: Direction::YNeg, magnitude: 1.0 }],
            },
            simp_iterations: 12,
            simp_compliance: 3.5,
        },
    };
    let ds = Dataset {
        mesh,
        channels: 6,
        master_seed: 1,
        bc: BcKind::Cantilever,
        samples: vec![sample(1.0), sample(-0.5)],
    };
    let dir = base.join("dataset_parse");
    std::fs::create_dir_all(&dir).unwrap();
    write_dataset(&ds, &dir.join("small.topd")).unwrap();

    // Split seed.
    let dir = base.join("split_parse");
    std::fs::create_dir_all(&dir).unwrap();
    write_split(&make_split(10, 1), &dir.join("ten.split")).unwrap();

    // Checkpoint seed: smallest valid architecture.
    let arch = ArchitectureConfig {
        input_channels: 3,
        stem_width: 1,
        encoder_widths: [1, 1, 1],
        bridge_width: 1,
        decoder_widths: [1, 1, 1],
        head_widths: vec![],
        standardize: false,
    };
    let state = TrainState::<f32>::new(arch, 1, &OptimizerConfig::default()).unwrap();
    let dir = base.join("checkpoint_parse");
    std::fs::create_dir_all(&dir).unwrap();
    save_checkpoint(&state, &dir.join("tiny.ckpt")).unwrap();

    println!("fuzz corpus seeds written under {}", base.display());
}
