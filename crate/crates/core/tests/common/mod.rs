#![allow(dead_code)]

use modify::data::{synth_generate, InMemoryDataset, StyleProfile, SyntheticFaceDataset};
use modify::nets::{ArchOptions, ArchSpec};
use modify::persist::StyleModelPackage;
use modify::stage1::{Stage1Schedule, Stage1Trainer};

pub fn synth(profile: StyleProfile, count: usize, resolution: usize, seed: u64) -> InMemoryDataset {
    synth_generate(&SyntheticFaceDataset {
        seed,
        count,
        resolution,
        profile,
    })
    .unwrap()
}

pub fn tiny_spec(resolution: usize) -> ArchSpec {
    ArchSpec::new(resolution, &ArchOptions::tiny(8)).unwrap()
}

/// A tiny stage-1 package trained for `iterations` steps.
pub fn tiny_package(resolution: usize, iterations: u64, seed: u64) -> StyleModelPackage {
    let data = synth(StyleProfile::Painterly, 4, resolution, seed);
    let mut schedule = Stage1Schedule::scaled(iterations);
    schedule.batch_size = 2;
    let mut t = Stage1Trainer::new(&tiny_spec(resolution), data, schedule, seed).unwrap();
    t.run(|_, _| Ok(())).unwrap();
    t.package(true)
}
