#![allow(dead_code)]

use hcmrf::graph::{generate, Graph, GraphKind};
use hcmrf::model::{Configuration, ConstraintGraph, Model, ModelParams, Preset};
use hcmrf::sampler::{find_valid_configuration_with, Chain};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A mix of structured and random graphs on at most `max_n` vertices.
pub fn random_graph(rng: &mut ChaCha8Rng, max_n: usize) -> Graph {
    let n = rng.gen_range(2..=max_n);
    let kind = match rng.gen_range(0..6) {
        0 => GraphKind::Path { n },
        1 if n >= 3 => GraphKind::Cycle { n },
        2 => GraphKind::Star { leaves: n - 1 },
        3 if n >= 4 => GraphKind::Grid { rows: 2, cols: n / 2 },
        4 if n >= 4 && n % 2 == 0 => GraphKind::RandomRegular { n, d: 3 },
        _ => GraphKind::ErdosRenyi { n, c: rng.gen_range(0.5..3.0f64).min(n as f64) },
    };
    generate(&kind, rng.gen()).unwrap()
}

pub fn random_preset(rng: &mut ChaCha8Rng, max_q: usize) -> Preset {
    loop {
        let p = match rng.gen_range(0..5) {
            0 => Preset::Hardcore,
            1 => Preset::WidomRowlinson,
            2 => Preset::CounterexampleH,
            3 => Preset::ProperColoring { q: rng.gen_range(3..=max_q.max(3)) },
            _ => Preset::MultistateHardcore { q: rng.gen_range(1..max_q.max(2)) },
        };
        if p.build().unwrap().q() <= max_q {
            return p;
        }
    }
}

pub fn random_beta(rng: &mut ChaCha8Rng, q: usize, scale: f64) -> Vec<f64> {
    (1..q).map(|_| rng.gen_range(-scale..=scale)).collect()
}

pub struct Instance {
    pub graph: Graph,
    pub h: ConstraintGraph,
    pub preset: Preset,
    pub cfg: Configuration,
}

/// A valid configuration on a random graph, moved away from the
/// initializer's output by a few Glauber sweeps at random parameters.
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize, max_q: usize) -> Instance {
    loop {
        let graph = random_graph(rng, max_n);
        let preset = random_preset(rng, max_q);
        let h = preset.build().unwrap();
        let Ok(start) = find_valid_configuration_with(&graph, &h, rng, 100_000) else {
            continue;
        };
        let beta = random_beta(rng, h.q(), 1.5);
        let model = Model::new(graph.clone(), h.clone(), ModelParams::new(beta).unwrap()).unwrap();
        let mut chain = Chain::new(&model, start, ChaCha8Rng::seed_from_u64(rng.gen())).unwrap();
        chain.run(rng.gen_range(0..10));
        let cfg = chain.into_configuration();
        return Instance { graph, h, preset, cfg };
    }
}
