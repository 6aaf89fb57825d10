//! Acceptance suite: one PASS/FAIL line per primary criterion.
//!
//! Runs without the libtest harness so the report reads top to bottom; the
//! process exits nonzero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use igmseg_core::affinity::{sweep, AffinityNeighborhood, SweepConfig};
use igmseg_core::igm::{ig_exact, kl_gaussian};
use igmseg_core::metrics::{detection_accuracy, seg_score, MatchTable, MetricOptions};
use igmseg_core::model::{InpaintModel, LocalStatsModel, PixelDistribution};
use igmseg_core::mws::{edge_order, mutex_watershed_clusters, segment, Edge, EdgeKind, MwsConfig};
use igmseg_core::numeric::rng_from_seed;
use igmseg_core::splitter::{evolve_mask, initial_split, BandSchedule, SplitConfig};
use igmseg_core::synth::{generate, GenConfig};
use igmseg_core::{LabelMap, PixelMask};
use rand::Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn monotone_descent() -> Outcome {
    let cfg = SplitConfig {
        iterations: 10,
        d0: 2.0,
        smoothing_sigmas: vec![],
        schedule: BandSchedule::Fixed,
        ..SplitConfig::default()
    };
    let mut rng = rng_from_seed(1);
    let mut steps = 0;
    for seed in 0..100u64 {
        let s = generate(&GenConfig {
            height: 32,
            width: 32,
            instances: (1, 3),
            radius: (5.0, 9.0),
            seed,
            ..GenConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let model = LocalStatsModel::new(rng.random_range(0.7..2.0), 0.3, 0.05, rng.random_range(1e-4..1e-2))
            .map_err(|e| e.to_string())?;
        let m0 = initial_split(32, 32, None, seed).map_err(|e| e.to_string())?;
        let evo = evolve_mask(&model, &s.image, &m0, &SplitConfig { seed, ..cfg.clone() }).map_err(|e| e.to_string())?;
        if let Some(w) = evo.trace.windows(2).find(|w| w[1] > w[0]) {
            return Err(format!("pair {seed}: trace rose from {} to {}", w[0], w[1]));
        }
        steps += evo.trace.len() - 1;
    }
    Ok(format!("100 pairs, {steps} accepted steps, no increase"))
}

/// Composite Simpson quadrature of `∫ p (ln p − ln q)` over `μ_p ± 14 σ_p`.
fn kl_quadrature(p: PixelDistribution, q: PixelDistribution) -> f64 {
    let log_density = |d: PixelDistribution, x: f64| {
        -0.5 * (2.0 * std::f64::consts::PI * d.variance).ln() - (x - d.mean).powi(2) / (2.0 * d.variance)
    };
    let sd = p.variance.sqrt();
    let (a, b) = (p.mean - 14.0 * sd, p.mean + 14.0 * sd);
    let n = 40_000;
    let h = (b - a) / n as f64;
    let f = |x: f64| log_density(p, x).exp() * (log_density(p, x) - log_density(q, x));
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn kl_correctness() -> Outcome {
    let mut rng = rng_from_seed(2);
    let mut worst = 0.0f64;
    let mut worst_self = 0.0f64;
    for _ in 0..1000 {
        let p = PixelDistribution::new(rng.random_range(-2.0..2.0), rng.random_range(0.01..4.0));
        let q = PixelDistribution::new(rng.random_range(-2.0..2.0), rng.random_range(0.01..4.0));
        let closed = kl_gaussian(p, q).map_err(|e| e.to_string())?;
        worst = worst.max((closed - kl_quadrature(p, q)).abs());
        worst_self = worst_self.max(kl_gaussian(p, p).map_err(|e| e.to_string())?.abs());
    }
    check(
        worst <= 1e-6 && worst_self <= 1e-12,
        format!("1000 pairs, max |closed - quadrature| = {worst:.2e}, max KL(p,p) = {worst_self:.1e}"),
    )
}

fn independence_realized() -> Outcome {
    let mut rng = rng_from_seed(3);
    let mut worst = 0.0f64;
    for k in 0..100u64 {
        let s = generate(&GenConfig {
            height: 32,
            width: 32,
            instances: (2, 4),
            radius: (5.0, 8.0),
            seed: 300 + k / 5,
            ..GenConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let i = rng.random_range(0..s.labels.len());
        let own = s.labels.segment_mask(s.labels.get(i));
        let keep = rng.random_range(0.0..1.0);
        let mask = own.or(&PixelMask::from_fn(32, 32, |_, _| rng.random_bool(keep)));
        worst = worst.max(ig_exact(&s.oracle, &s.image, i, &mask).map_err(|e| e.to_string())?.abs());
    }
    check(worst <= 1e-9, format!("100 pixels, max |IG| = {worst:.2e}"))
}

fn n2v_spacing() -> Outcome {
    let mut rng = rng_from_seed(4);
    let mut targets_checked = 0;
    for k in 0..100u64 {
        let s = generate(&GenConfig {
            height: 40,
            width: 40,
            instances: (2, 3),
            radius: (6.0, 9.0),
            seed: 400 + k,
            ..GenConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let model: Box<dyn InpaintModel> = if k % 2 == 0 {
            Box::new(LocalStatsModel::new(rng.random_range(0.5..2.5), 0.4, 0.05, 0.01).map_err(|e| e.to_string())?)
        } else {
            Box::new(s.oracle.clone().with_window(rng.random_range(2.0..8.0)).map_err(|e| e.to_string())?)
        };
        let fov = model.fov_radius();
        let density = rng.random_range(0.3..0.95);
        let observed = PixelMask::from_fn(40, 40, |_, _| rng.random_bool(density));
        let mut targets: Vec<usize> = Vec::new();
        for _ in 0..200 {
            let p = rng.random_range(0..1600);
            if targets.iter().all(|&q| {
                let (dy, dx) = ((p / 40) as f64 - (q / 40) as f64, (p % 40) as f64 - (q % 40) as f64);
                (dy * dy + dx * dx).sqrt() > fov
            }) {
                targets.push(p);
            }
        }
        let joint = model.predict(&s.image, &observed, &targets).map_err(|e| e.to_string())?;
        for (t, j) in targets.iter().zip(&joint) {
            let alone = model.predict(&s.image, &observed, &[*t]).map_err(|e| e.to_string())?[0];
            if alone.mean.to_bits() != j.mean.to_bits() || alone.variance.to_bits() != j.variance.to_bits() {
                return Err(format!("configuration {k}, target {t}: joint {j:?} vs separate {alone:?}"));
            }
        }
        targets_checked += targets.len();
    }
    Ok(format!("100 configurations, {targets_checked} targets bit-identical"))
}

/// Constraint-table replay of the sorted edge list.
fn replay(n: usize, edges: &[Edge]) -> Vec<u32> {
    let mut sorted = edges.to_vec();
    sorted.sort_by(edge_order);
    let mut cluster: Vec<usize> = (0..n).collect();
    let mut table: Vec<(usize, usize)> = Vec::new();
    for e in sorted.iter().filter(|e| e.weight > 0.0) {
        let (cu, cv) = (cluster[e.u], cluster[e.v]);
        if cu == cv {
            continue;
        }
        match e.kind {
            EdgeKind::Mutex => table.push((e.u, e.v)),
            EdgeKind::Attractive => {
                let blocked = table.iter().any(|&(a, b)| {
                    let (ca, cb) = (cluster[a], cluster[b]);
                    (ca == cu && cb == cv) || (ca == cv && cb == cu)
                });
                if !blocked {
                    cluster.iter_mut().filter(|c| **c == cv).for_each(|c| *c = cu);
                }
            }
        }
    }
    let mut seen: Vec<usize> = Vec::new();
    cluster
        .iter()
        .map(|c| match seen.iter().position(|s| s == c) {
            Some(i) => i as u32 + 1,
            None => {
                seen.push(*c);
                seen.len() as u32
            }
        })
        .collect()
}

fn mws_equivalence() -> Outcome {
    let mut rng = rng_from_seed(5);
    for g in 0..500 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(0..=20);
        let edges: Vec<Edge> = (0..m)
            .filter_map(|_| {
                let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
                let weight = if rng.random_bool(0.5) {
                    rng.random_range(0..=5) as f64 / 5.0
                } else {
                    rng.random_range(0.0..1.0)
                };
                let kind = if rng.random_bool(0.5) { EdgeKind::Attractive } else { EdgeKind::Mutex };
                (a != b).then(|| Edge { u: a.min(b), v: a.max(b), weight, kind })
            })
            .collect();
        let fast = mutex_watershed_clusters(n, &edges).map_err(|e| e.to_string())?;
        let slow = replay(n, &edges);
        if fast != slow {
            return Err(format!("graph {g}: {fast:?} vs oracle {slow:?}"));
        }
    }
    Ok("500 graphs identical to the replay oracle".into())
}

fn end_to_end() -> Outcome {
    let gen = |seed| GenConfig {
        height: 96,
        width: 96,
        instances: (3, 5),
        touch_prob: 1.0,
        seed,
        ..GenConfig::default()
    };
    let nbhd = AffinityNeighborhood::default();
    let sweep_cfg = SweepConfig {
        patch_size: 48,
        stride: 24,
        ..SweepConfig::default()
    };
    let fields = |seeds: std::ops::Range<u64>| -> Result<Vec<_>, String> {
        seeds
            .map(|seed| {
                let s = generate(&gen(seed)).map_err(|e| e.to_string())?;
                let field = sweep(&s.image, &s.oracle, &sweep_cfg, &nbhd, 1).map_err(|e| e.to_string())?;
                Ok((field, s.labels))
            })
            .collect()
    };
    let score = |set: &[(igmseg_core::affinity::AffinityField, LabelMap)], alpha: f64| -> Result<(f64, f64), String> {
        let (mut seg, mut det) = (0.0, 0.0);
        for (field, labels) in set {
            let cfg = MwsConfig { alpha, foreground: Some(labels.foreground()), min_segment: 0 };
            let pred = segment(field, &cfg, &nbhd).map_err(|e| e.to_string())?;
            let table = MatchTable::compute(labels, &pred, MetricOptions::default()).map_err(|e| e.to_string())?;
            seg += table.seg();
            det += table.detection(&[0.5]).map_err(|e| e.to_string())?[0];
        }
        Ok((seg / set.len() as f64, det / set.len() as f64))
    };

    let validation = fields(1000..1005)?;
    let grid = [0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0];
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &a in &grid {
        let (seg, _) = score(&validation, a)?;
        if seg > best.1 {
            best = (a, seg);
        }
    }
    let test = fields(0..20)?;
    let (seg, det) = score(&test, best.0)?;
    let mut cc = 0.0;
    for (_, labels) in &test {
        cc += seg_score(labels, &LabelMap::connected_components(&labels.foreground())).map_err(|e| e.to_string())?;
    }
    cc /= test.len() as f64;
    check(
        seg >= 0.85 && det >= 0.9 && seg > cc,
        format!(
            "alpha {} (validation SEG {:.3}); test SEG {seg:.3} (>= 0.85), det@0.5 {det:.3} (>= 0.9), connected components SEG {cc:.3}",
            best.0, best.1
        ),
    )
}

fn digest(path: &Path) -> Result<Vec<u8>, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(Sha256::digest(&bytes).to_vec())
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_igmseg"))
        .args(args)
        .env_remove("IGMSEG_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("igmseg {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// generate, affinities and segment into `dir`; returns the output digests.
fn pipeline(dir: &Path, workers: usize) -> Result<Vec<Vec<u8>>, String> {
    let d = |p: &str| dir.join(p).to_string_lossy().into_owned();
    std::fs::write(dir.join("run.cfg"), "gen.count=2\ngen.height=64\ngen.width=64\ngen.seed=17\nsweep.stride=16\nsweep.seed=5\n")
        .map_err(|e| e.to_string())?;
    let w = workers.to_string();
    run_cli(&["generate", "--config", &d("run.cfg"), "--out", &d("data")])?;
    let mut digests = Vec::new();
    for name in ["000", "001"] {
        let image = d(&format!("data/images/{name}.pgm"));
        let model = d(&format!("data/models/{name}.model"));
        let field = d(&format!("{name}.iaf"));
        let labels = d(&format!("{name}.pgm"));
        run_cli(&["--workers", &w, "affinities", "--config", &d("run.cfg"), "--model", &model, "--out", &field, &image])?;
        let fg = d(&format!("data/labels/{name}.pgm"));
        run_cli(&["segment", "--affinities", &field, "--alpha", "0.7", "--foreground", &fg, "--out", &labels])?;
        for p in [&image, &fg, &field, &labels] {
            digests.push(digest(Path::new(p))?);
        }
    }
    Ok(digests)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: Vec<_> = [(1, "a"), (1, "b"), (3, "c")]
        .iter()
        .map(|&(w, sub)| {
            let dir = tmp.path().join(sub);
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            pipeline(&dir, w)
        })
        .collect::<Result<_, _>>()?;
    check(
        runs[0] == runs[1] && runs[0] == runs[2],
        format!("{} files bit-identical across 3 runs (workers 1, 1, 3)", runs[0].len()),
    )
}

fn metric_fixtures() -> Outcome {
    let row = |v: &[u32]| LabelMap::new(1, v.len(), v.to_vec()).map_err(|e| e.to_string());
    let gt = row(&[1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0])?;
    let perfect = seg_score(&gt, &gt).map_err(|e| e.to_string())?;
    let half = seg_score(&gt, &row(&[5, 5, 5, 5, 5, 5, 0, 0, 0, 0, 5, 5])?).map_err(|e| e.to_string())?;
    let strict = seg_score(&gt, &row(&[5, 5, 5, 5, 5, 0, 0, 0, 0, 0, 0, 0])?).map_err(|e| e.to_string())?;
    if (perfect, half, strict) != (1.0, 0.5, 0.0) {
        return Err(format!("hand cases gave {perfect}, {half}, {strict}"));
    }
    let mut rng = rng_from_seed(8);
    let thresholds: Vec<f64> = (1..=20).map(|k| k as f64 / 20.0).collect();
    for k in 0..100 {
        let (h, w) = (rng.random_range(2..12), rng.random_range(2..12));
        let labels_gt: Vec<u32> = (0..h * w).map(|_| rng.random_range(0..5)).collect();
        if labels_gt.iter().all(|&l| l == 0) {
            continue;
        }
        let labels_pred: Vec<u32> = labels_gt
            .iter()
            .map(|&l| if rng.random_bool(0.7) { l } else { rng.random_range(0..5) })
            .collect();
        let g = LabelMap::new(h, w, labels_gt).map_err(|e| e.to_string())?;
        let p = LabelMap::new(h, w, labels_pred).map_err(|e| e.to_string())?;
        let det = detection_accuracy(&g, &p, &thresholds).map_err(|e| e.to_string())?;
        if det.windows(2).any(|x| x[1] > x[0]) {
            return Err(format!("map {k}: detection rises with the threshold: {det:?}"));
        }
    }
    Ok("hand cases 1.0 / 0.5 / 0.0 exact; detection non-increasing on 100 random maps".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("monotone descent", monotone_descent),
        ("KL correctness", kl_correctness),
        ("independence assumption realized", independence_realized),
        ("N2V spacing approximation", n2v_spacing),
        ("Mutex Watershed oracle equivalence", mws_equivalence),
        ("end-to-end synthetic separation", end_to_end),
        ("determinism", determinism),
        ("metric fixtures", metric_fixtures),
    ];
    let only = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if only.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({secs:.1}s)", k + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL [{}] {name}: {detail} ({secs:.1}s)", k + 1);
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
