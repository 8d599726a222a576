//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Trained models are shared between criteria.
//!
//! `TTFS_ACCEPT_ONLY=4,7` restricts the run to the listed criteria.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ttfs::engine::finite_diff_check;
use ttfs::engine::Graph;
use ttfs::io::read_mnist_dir;
use ttfs::layers::{
    add_skip, channel_shuffle, channel_split, concat_channels, make_architecture, ArchKind,
    Granularity,
};
use ttfs::metrics::{
    branch_mean_gaps, estimate_energy, evaluate, run_report, timing_histograms, E_AC_PJ, E_MAC_PJ,
};
use ttfs::temporal::{membrane_oracle, solve_spike_time, SynapseInput, T_MAX};
use ttfs::training::loss::{loss_ce, total_loss};
use ttfs::training::optim::project_nonnegative;
use ttfs::training::{train, TrainConfig};
use ttfs::wave::{convergence_factor, generate_dataset, WaveConfig};
use ttfs::{Dataset, Exec, Shape3, TimeTensor};

const SEEDS: [u64; 3] = [0, 1, 2];
const CONCATS: [ArchKind; 2] = [ArchKind::ConcatSkip, ArchKind::ConcatSkipDelay];

/// Shared recipe for every trained model below.
fn recipe(arch: ArchKind, seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 64,
        lr: 2e-2,
        fan_in_lr: true,
        grad_clip: 0.0,
        width: 8,
        architecture: arch,
        seed,
        ..Default::default()
    }
}

struct Trained {
    graph: Graph,
    accuracy: f64,
    latency: f64,
}

struct Wave {
    train: Dataset,
    test: Dataset,
}

#[derive(Default)]
struct Lab {
    waves: HashMap<usize, Wave>,
    runs: HashMap<(usize, ArchKind, u64), Trained>,
}

impl Lab {
    fn wave(&mut self, zones: usize) -> &Wave {
        self.waves.entry(zones).or_insert_with(|| {
            let d = generate_dataset(
                &WaveConfig {
                    zones,
                    ..Default::default()
                },
                0,
                Exec::Parallel,
            )
            .expect("wave data");
            Wave {
                train: d.train,
                test: d.test,
            }
        })
    }

    /// 40-epoch wave model, trained once per (zones, arch, seed).
    fn trained(&mut self, zones: usize, arch: ArchKind, seed: u64) -> &Trained {
        if !self.runs.contains_key(&(zones, arch, seed)) {
            let start = Instant::now();
            let w = self.wave(zones);
            let out = train(
                &recipe(arch, seed, 40),
                &w.train,
                &w.test,
                Exec::Parallel,
                |_, _| {},
            )
            .expect("training");
            let (accuracy, lat) =
                evaluate(&out.graph, &w.test, Exec::Parallel).expect("evaluation");
            eprintln!(
                "  trained {}x{zones} {} seed {seed}: {accuracy:.2}% latency {:.3} ({:.0}s)",
                zones,
                arch.as_str(),
                lat.mean,
                start.elapsed().as_secs_f64()
            );
            self.runs.insert(
                (zones, arch, seed),
                Trained {
                    graph: out.graph,
                    accuracy,
                    latency: lat.mean,
                },
            );
        }
        &self.runs[&(zones, arch, seed)]
    }
}

type Verdict = Result<String, String>;
type Criterion = dyn FnMut(&mut Lab) -> Verdict;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn solve_times(pairs: &[(f64, f64)]) -> f64 {
    let inputs: Vec<_> = pairs
        .iter()
        .map(|&(t, w)| SynapseInput::at_time(t, w).unwrap())
        .collect();
    solve_spike_time(&inputs).t_out()
}

fn random_synapses(rng: &mut ChaCha8Rng, max: usize) -> Vec<(f64, f64)> {
    let n = rng.gen_range(1..=max);
    (0..n)
        .map(|_| (rng.gen_range(0.0..4.0), rng.gen_range(-0.5..2.0)))
        .collect()
}

fn random_times(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.125) {
                f64::INFINITY
            } else {
                rng.gen_range(0.0..5.0)
            }
        })
        .collect()
}

fn solver_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut fired, mut mismatched) = (0.0f64, 0usize, 0usize);
    for _ in 0..1000 {
        let pairs = random_synapses(&mut rng, 16);
        let t = solve_times(&pairs);
        let o = membrane_oracle(&pairs, 1e-4, T_MAX).unwrap();
        if t.is_finite() != o.is_finite() {
            mismatched += 1;
        } else if t.is_finite() {
            fired += 1;
            worst = worst.max((t - o).abs());
        }
    }
    check(
        mismatched == 0 && worst < 1e-3,
        format!("1000 sets, {fired} firing, {mismatched} firing mismatches, max |dt| {worst:.2e}"),
    )
}

fn gradients() -> Verdict {
    let input = Shape3::new(1, 28, 28);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let images: Vec<f64> = (0..4 * input.len()).map(|_| rng.gen()).collect();
    let labels = vec![0, 3, 7, 9];
    let lambdas = TrainConfig::default().lambdas();
    let mut parts = Vec::new();
    let mut ok = true;
    for arch in ArchKind::ALL {
        let cfg = make_architecture(arch, input, 10, 8, Granularity::Channel, 0.5).unwrap();
        let g = Graph::build(&cfg, 3).unwrap();
        let r = finite_diff_check(&g, &images, &labels, lambdas, 1e-4, 200, 4)
            .map_err(|e| e.to_string())?;
        ok &= r.max_rel_err < 1e-3 && r.checked == 200;
        parts.push(format!(
            "{} {:.1e} ({} checked)",
            arch.as_str(),
            r.max_rel_err,
            r.checked
        ));
    }
    check(ok, parts.join(", "))
}

fn properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fails = Vec::new();
    let cases = 500;
    for _ in 0..cases {
        let pairs = random_synapses(&mut rng, 8);
        let t = solve_times(&pairs);
        for delta in [0.1, 1.0] {
            let shifted: Vec<_> = pairs.iter().map(|&(tk, w)| (tk + delta, w)).collect();
            let ts = solve_times(&shifted);
            let ok = if t.is_finite() && t + delta < T_MAX - 1e-9 {
                (ts - t - delta).abs() < 1e-9
            } else {
                t.is_finite() || !ts.is_finite()
            };
            if !ok {
                fails.push(format!("shift {delta}: {t} -> {ts}"));
            }
        }

        let c = rng.gen_range(1..5);
        let x = TimeTensor::new(vec![2, 2 * c, 3, 1], random_times(&mut rng, 12 * c)).unwrap();
        let (a, b) = channel_split(&x).unwrap();
        if concat_channels(&a, &b).unwrap() != x {
            fails.push("split/concat".into());
        }
        let (groups, per) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let x = TimeTensor::new(
            vec![1, groups * per, 3, 1],
            random_times(&mut rng, 3 * groups * per),
        )
        .unwrap();
        if channel_shuffle(&channel_shuffle(&x, groups).unwrap(), per).unwrap() != x {
            fails.push("shuffle".into());
        }

        let ta = TimeTensor::new(vec![1, 3, 2, 2], random_times(&mut rng, 12)).unwrap();
        let tb = TimeTensor::new(vec![1, 3, 2, 2], random_times(&mut rng, 12)).unwrap();
        let sum = add_skip(&ta, &tb).unwrap();
        if sum
            .data()
            .iter()
            .zip(ta.data())
            .zip(tb.data())
            .any(|((o, a), b)| o < a || o < b)
        {
            fails.push("add_skip".into());
        }

        let o: Vec<f64> = (0..rng.gen_range(2..10))
            .map(|_| rng.gen_range(0.0..4.0))
            .collect();
        let y = rng.gen_range(0..o.len());
        let shift = rng.gen_range(0.0..4.0);
        let moved: Vec<f64> = o.iter().map(|t| t + shift).collect();
        if (loss_ce(&o, y).unwrap() - loss_ce(&moved, y).unwrap()).abs() > 1e-9 {
            fails.push("ce shift".into());
        }
        let (ce, wp, ov, l1, l2) = (
            rng.gen_range(0.0..5.0),
            rng.gen_range(0.0..5.0),
            rng.gen_range(0.0..50.0),
            rng.gen(),
            rng.gen(),
        );
        if total_loss(ce, wp, ov, l1, l2).total != ce + l1 * wp + l2 * ov {
            fails.push("total loss".into());
        }

        let mut theta: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let before = theta.clone();
        project_nonnegative(&mut theta);
        if theta.iter().zip(&before).any(|(t, b)| *t != b.max(0.0)) {
            fails.push("projection".into());
        }
    }
    match fails.first() {
        None => Ok(format!("{cases} cases each of shift, split/concat, shuffle, add_skip, CE shift, total loss, projection")),
        Some(f) => Err(format!("{} failures, first: {f}", fails.len())),
    }
}

fn wave_accuracy(lab: &mut Lab) -> Verdict {
    let d = lab.trained(3, ArchKind::ConcatSkipDelay, 0).accuracy;
    let b = lab.trained(3, ArchKind::Baseline, 0).accuracy;
    check(
        d >= 95.0 && b >= 93.0,
        format!("concat_skip_delay {d:.2}% (>= 95), baseline {b:.2}% (>= 93)"),
    )
}

fn latency_order(lab: &mut Lab) -> Verdict {
    let mut held = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let mut lat = |a| lab.trained(3, a, seed).latency;
        let base = lat(ArchKind::Baseline);
        let add = lat(ArchKind::AddSkip);
        let cat: Vec<f64> = CONCATS.iter().map(|&a| lat(a)).collect();
        let ok = cat.iter().all(|&c| c < base) && base < add;
        held += ok as usize;
        parts.push(format!(
            "seed {seed}: concat {:.2}/{:.2} baseline {base:.2} add {add:.2}{}",
            cat[0],
            cat[1],
            if ok { "" } else { " (violated)" }
        ));
    }
    check(
        held >= 2,
        format!("{held}/3 seeds ordered; {}", parts.join("; ")),
    )
}

fn delay_benefit(lab: &mut Lab) -> Verdict {
    let (mut sum_d, mut sum_c, mut within) = (0.0, 0.0, true);
    let mut parts = Vec::new();
    for seed in SEEDS {
        let c = lab.trained(6, ArchKind::ConcatSkip, seed).accuracy;
        let d = lab.trained(6, ArchKind::ConcatSkipDelay, seed).accuracy;
        within &= d >= c - 0.2;
        sum_c += c;
        sum_d += d;
        parts.push(format!("seed {seed} {d:.2} vs {c:.2}"));
    }
    let (md, mc) = (sum_d / 3.0, sum_c / 3.0);
    check(
        within && md > mc,
        format!(
            "mean delay {md:.2}% vs no delay {mc:.2}%; {}",
            parts.join(", ")
        ),
    )
}

fn energy(lab: &mut Lab) -> Verdict {
    let flops = [1000.0, 2000.0, 500.0];
    let rates = [0.5, 0.25, 1.0];
    let e = estimate_energy(&flops, &rates).map_err(|e| e.to_string())?;
    let hand_ann = 3500.0 * E_MAC_PJ;
    let hand_snn = 1500.0 * E_AC_PJ;
    let exact = e.e_ann_pj == hand_ann && e.e_snn_pj == hand_snn && e.ratio == hand_snn / hand_ann;
    lab.trained(3, ArchKind::ConcatSkipDelay, 0);
    let t = &lab.runs[&(3, ArchKind::ConcatSkipDelay, 0)];
    let test = &lab.waves[&3].test;
    let r = run_report(&t.graph, test, Exec::Parallel).map_err(|e| e.to_string())?;
    check(
        exact && r.energy_ratio < 0.5,
        format!(
            "synthetic {:.1}/{:.1} pJ (hand {hand_ann:.1}/{hand_snn:.1}), trained ratio {:.3} (< 0.5)",
            e.e_ann_pj, e.e_snn_pj, r.energy_ratio
        ),
    )
}

fn mnist() -> Verdict {
    let Some(root) = std::env::var_os("TTFS_DATA_DIR") else {
        return Err("TTFS_DATA_DIR is not set; no MNIST files to train on".into());
    };
    let dir = PathBuf::from(root).join("mnist");
    let (train_set, test_set) =
        read_mnist_dir(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let subset = train_set.take(10_000);
    let out = train(
        &recipe(ArchKind::ConcatSkipDelay, 0, 20),
        &subset,
        &test_set,
        Exec::Parallel,
        |_, _| {},
    )
    .map_err(|e| e.to_string())?;
    let (acc, _) = evaluate(&out.graph, &test_set, Exec::Parallel).map_err(|e| e.to_string())?;
    check(
        acc >= 96.0,
        format!("{acc:.2}% on {} test images (>= 96)", test_set.len()),
    )
}

fn histogram_gaps(lab: &mut Lab) -> Verdict {
    let mut held = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let mut gaps = |arch| {
            lab.trained(3, arch, seed);
            let t = &lab.runs[&(3, arch, seed)];
            let h = timing_histograms(&t.graph, &lab.waves[&3].test, 50, Exec::Parallel).unwrap();
            branch_mean_gaps(&t.graph, &h)
        };
        let plain = gaps(ArchKind::ConcatSkip);
        let delayed = gaps(ArchKind::ConcatSkipDelay);
        let ok = plain.len() == delayed.len()
            && plain
                .iter()
                .zip(&delayed)
                .all(|(p, d)| matches!((p, d), (Some(p), Some(d)) if p > d));
        held += ok as usize;
        let fmt = |g: &[Option<f64>]| {
            g.iter()
                .map(|v| v.map_or("-".into(), |v| format!("{v:.2}")))
                .collect::<Vec<_>>()
                .join("/")
        };
        parts.push(format!("seed {seed}: {} vs {}", fmt(&plain), fmt(&delayed)));
    }
    check(
        held >= 2,
        format!(
            "{held}/3 seeds with every block gap larger without delay; {}",
            parts.join("; ")
        ),
    )
}

fn convergence() -> Verdict {
    let f = convergence_factor(33, 0.5, 0.5).map_err(|e| e.to_string())?;
    check(
        (3.0..=5.0).contains(&f),
        format!("factor {f:.3} for 33 -> 65 points"),
    )
}

fn main() {
    // Ignore libtest flags such as `--nocapture` passed by `cargo test`.
    let only: Option<Vec<usize>> = std::env::var("TTFS_ACCEPT_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut lab = Lab::default();
    let criteria: [(&str, &mut Criterion); 10] = [
        ("solver matches membrane oracle", &mut |_| solver_oracle()),
        ("finite-difference gradients", &mut |_| gradients()),
        ("property suite", &mut |_| properties()),
        ("wave 3x3 accuracy", &mut wave_accuracy),
        ("latency ordering", &mut latency_order),
        ("delay benefit on wave 6x6", &mut delay_benefit),
        ("energy model", &mut energy),
        ("MNIST reduced run", &mut |_| mnist()),
        ("branch timing gaps", &mut histogram_gaps),
        ("wave solver convergence", &mut |_| convergence()),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let v = run(&mut lab);
        let secs = start.elapsed().as_secs_f64();
        match v {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d} [{secs:.0}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d} [{secs:.0}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
