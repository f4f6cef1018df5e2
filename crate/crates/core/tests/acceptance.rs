//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adalength::annotate::{parse_eval_log, transition_table, Cutoffs};
use adalength::difficulty::{audio_attention_entropy, grdr_gamma, normalize_batch, AttentionSnapshot, RolloutGroup};
use adalength::grpo::{clipped_surrogate, group_advantages, kl_term, GrpoConfig};
use adalength::reward::{
    adaptive_length_reward, adaptive_length_reward_thresholded, truncation_reward, DifficultyScore, RewardConfig,
    RolloutSample,
};
use adalength::sim::default_question_bank;
use adalength::train::{run_simulation, SimConfig, SimulationOutcome, StackKind, Summary};
use adalength::DifficultyLabel::{self, Easy, Hard, Medium};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn c1_reward_oracle() -> Verdict {
    let start = Instant::now();
    let cfg = RewardConfig::<f64>::default();
    let mut r = rng(1);
    let mut max_err = 0.0f64;
    for _ in 0..10_000 {
        let correct: bool = r.random();
        let l: f64 = r.random();
        let g: f64 = r.random();
        let s = RolloutSample::from_norm_length(correct, l).unwrap();
        let got = adaptive_length_reward(&s, DifficultyScore::new(g).unwrap(), &cfg);
        let k = 10.0 + g * (2.0 - 10.0);
        let want = if correct { (-k * l).exp() } else { -(-k * l).exp() };
        max_err = max_err.max((got - want).abs());
    }
    let spot = |g: f64| {
        let s = RolloutSample::from_norm_length(true, 0.1).unwrap();
        adaptive_length_reward(&s, DifficultyScore::new(g).unwrap(), &cfg)
    };
    let e0 = (spot(0.0) - 0.36787944117144233).abs();
    let e1 = (spot(1.0) - 0.8187307530779818).abs();
    let elapsed = start.elapsed();
    verdict(
        max_err <= 1e-12 && e0 <= 1e-12 && e1 <= 1e-12 && elapsed < Duration::from_secs(1),
        format!("max |err| {max_err:.2e} over 10000 triples; spot errors {e0:.2e}, {e1:.2e}; {elapsed:.2?}"),
    )
}

fn c2_grdr() -> Verdict {
    let mut bad = Vec::new();
    for c in 0..=8usize {
        let samples = (0..8).map(|i| RolloutSample::<f64>::from_norm_length(i < c, 0.5).unwrap()).collect();
        let g = grdr_gamma(&RolloutGroup::new("q", samples).unwrap()).value();
        let want = if c >= 6 {
            0.0
        } else if c >= 3 {
            0.5
        } else {
            1.0
        };
        if g != want {
            bad.push(format!("C={c}: {g}"));
        }
    }
    verdict(bad.is_empty(), if bad.is_empty() { "all C in 0..=8 exact".into() } else { bad.join(", ") })
}

fn random_snapshot(r: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let tokens = r.random_range(2..40);
    let heads = r.random_range(1..6);
    let rows = (0..heads)
        .map(|_| {
            let w: Vec<f64> = (0..tokens).map(|_| r.random::<f64>() + 1e-3).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        })
        .collect();
    let mut idx: Vec<usize> = (0..tokens).filter(|_| r.random_bool(0.5)).collect();
    if idx.is_empty() {
        idx.push(r.random_range(0..tokens));
    }
    (rows, idx)
}

fn brute_entropy(rows: &[Vec<f64>], idx: &[usize], renormalize: bool) -> f64 {
    let mut p = vec![0.0; idx.len()];
    for (k, &j) in idx.iter().enumerate() {
        for row in rows {
            p[k] += row[j];
        }
        p[k] /= rows.len() as f64;
    }
    if renormalize {
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
    }
    let mut h = 0.0;
    for x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    h
}

fn c3_entropy() -> Verdict {
    let mut r = rng(3);
    let mut max_err = 0.0f64;
    for i in 0..1000 {
        let (rows, idx) = random_snapshot(&mut r);
        let renorm = i % 2 == 0;
        let snap = AttentionSnapshot::new(rows.clone(), idx.clone()).unwrap();
        let got = audio_attention_entropy(&snap, renorm).unwrap();
        max_err = max_err.max((got - brute_entropy(&rows, &idx, renorm)).abs());
    }
    let mut uniform_err = 0.0f64;
    for m in [1usize, 2, 7, 32] {
        let t = 64;
        let row = vec![1.0 / t as f64; t];
        let snap = AttentionSnapshot::new(vec![row.clone(), row], (10..10 + m).collect()).unwrap();
        let h = audio_attention_entropy(&snap, true).unwrap();
        uniform_err = uniform_err.max((h - (m as f64).ln()).abs());
    }
    let mut norm_ok = true;
    for _ in 0..200 {
        let n = r.random_range(2..20);
        let e: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 4.0).collect();
        let g: Vec<f64> = normalize_batch(&e).unwrap().gammas.iter().map(|g| g.value()).collect();
        let (lo, hi) =
            (e.iter().copied().fold(f64::INFINITY, f64::min), e.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        for (x, y) in e.iter().zip(&g) {
            norm_ok &= (0.0..=1.0).contains(y);
            if *x == lo {
                norm_ok &= *y == 0.0;
            }
            if *x == hi {
                norm_ok &= *y == 1.0;
            }
        }
    }
    verdict(
        max_err <= 1e-12 && uniform_err <= 1e-12 && norm_ok,
        format!("max |err| {max_err:.2e} over 1000 snapshots; uniform vs ln|M| {uniform_err:.2e}; min-max map ok: {norm_ok}"),
    )
}

fn c4_advantages() -> Verdict {
    let cfg = GrpoConfig::<f64>::default();
    let mut r = rng(4);
    let (mut mean_err, mut affine_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = r.random_range(2..17);
        let rewards: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..2.0)).collect();
        let a = group_advantages(&rewards, &cfg).unwrap().values;
        mean_err = mean_err.max((a.iter().sum::<f64>() / n as f64).abs());
        let scale = r.random_range(0.1..10.0);
        let shift = r.random_range(-5.0..5.0);
        let moved: Vec<f64> = rewards.iter().map(|x| scale * x + shift).collect();
        let b = group_advantages(&moved, &cfg).unwrap().values;
        for (x, y) in a.iter().zip(&b) {
            affine_err = affine_err.max((x - y).abs());
        }
    }
    let degenerate_ok = [vec![1.0; 8], vec![0.0; 2], vec![-0.5; 5]]
        .iter()
        .all(|g| group_advantages(g, &cfg).unwrap().values.iter().all(|&a| a == 0.0));
    verdict(
        mean_err <= 1e-9 && affine_err <= 1e-9 && degenerate_ok,
        format!("max |group mean| {mean_err:.2e}; max affine drift {affine_err:.2e}; degenerate groups zero: {degenerate_ok}"),
    )
}

fn c5_kl_surrogate() -> Verdict {
    let mut r = rng(5);
    let mut kl_ok = kl_term(0.0f64, 0.0).unwrap().abs() <= 1e-12;
    for _ in 0..10_000 {
        let x: f64 = r.random_range(-5.0..5.0);
        let k = kl_term(x, 0.0).unwrap();
        kl_ok &= if x == 0.0 { k.abs() <= 1e-12 } else { k > 0.0 };
    }

    let eps = 0.2;
    let (mut pos_viol, mut neg_viol, mut lower_bound_viol, mut points) = (0, 0, 0, 0);
    let mut first_neg = None;
    for i in 0..=290 {
        let ratio = 0.1 + i as f64 * 0.01;
        for j in 0..=400 {
            let a = -2.0 + j as f64 * 0.01;
            let s = clipped_surrogate(ratio, a, eps);
            let unclipped = ratio * a;
            points += 1;
            if a > 0.0 && s > unclipped {
                pos_viol += 1;
            }
            if a < 0.0 && s < unclipped {
                neg_viol += 1;
                first_neg.get_or_insert((ratio, a, s, unclipped));
            }
            if s > unclipped {
                lower_bound_viol += 1;
            }
        }
    }
    let mut detail = format!(
        "kl >= 0, zero only at 0: {kl_ok}; {points} grid points: A>0 violations {pos_viol}, A<0 violations {neg_viol}"
    );
    if let Some((ratio, a, s, u)) = first_neg {
        detail.push_str(&format!(
            " (e.g. ratio {ratio:.2}, A {a:.2}: surrogate {s:.3} < ratio*A {u:.3}); \
             min(ratio*A, clip*A) <= ratio*A for every A, violations {lower_bound_viol}"
        ));
    }
    verdict(kl_ok && pos_viol == 0 && neg_viol == 0, detail)
}

struct Runs {
    acc: SimulationOutcome,
    grdr: SimulationOutcome,
    ga2dr: SimulationOutcome,
    tr: SimulationOutcome,
    grdr_time: Duration,
}

fn runs() -> Runs {
    let bank = default_question_bank(64, 42);
    let grpo = GrpoConfig { seed: 42, group_size: 8, steps: 300, ..GrpoConfig::default() };
    let run = |k| {
        let t = Instant::now();
        let out = run_simulation(&bank, k, &RewardConfig::default(), &grpo, &SimConfig::default()).unwrap();
        (out, t.elapsed())
    };
    let (grdr, grdr_time) = run(StackKind::GrdrAdaptive);
    Runs {
        acc: run(StackKind::AccuracyOnly).0,
        grdr,
        ga2dr: run(StackKind::Ga2drAdaptive).0,
        tr: run(StackKind::Truncation).0,
        grdr_time,
    }
}

fn lengths(s: &Summary) -> [f64; 3] {
    DifficultyLabel::ALL.map(|c| s.mean_length(c))
}

fn ordered(m: [f64; 3]) -> bool {
    m[0] + 0.05 <= m[1] && m[1] <= m[2] - 0.05
}

fn fmt3(m: [f64; 3]) -> String {
    format!("easy {:.4} medium {:.4} hard {:.4}", m[0], m[1], m[2])
}

fn c6_trend(runs: &Runs) -> Verdict {
    let m = lengths(&runs.grdr.summary);
    verdict(ordered(m) && runs.grdr_time < Duration::from_secs(60), format!("{}; {:.2?}", fmt3(m), runs.grdr_time))
}

fn c7_efficiency(runs: &Runs) -> Verdict {
    let (a, g) = (&runs.acc.summary, &runs.grdr.summary);
    let ratio = g.overall_mean_length / a.overall_mean_length;
    let gap = (g.overall_accuracy - a.overall_accuracy).abs();
    verdict(
        ratio <= 0.8 && gap <= 0.03,
        format!(
            "length {:.4} vs {:.4} (ratio {ratio:.4}); accuracy {:.4} vs {:.4} (gap {gap:.4})",
            g.overall_mean_length, a.overall_mean_length, g.overall_accuracy, a.overall_accuracy
        ),
    )
}

fn c8_ga2dr(runs: &Runs) -> Verdict {
    let (g, a) = (lengths(&runs.grdr.summary), lengths(&runs.ga2dr.summary));
    let diff = (0..3).map(|i| (g[i] - a[i]).abs()).fold(0.0, f64::max);
    verdict(ordered(a) && diff < 0.1, format!("{}; max per-class difference to GRDR {diff:.4}", fmt3(a)))
}

fn c9_truncation(runs: &Runs) -> Verdict {
    let mut bad = Vec::new();
    for lt in [120usize, 400] {
        let cfg = RewardConfig::<f64> { trunc_threshold: lt, trunc_penalty: -0.5, ..RewardConfig::default() };
        for raw in (0..=8).chain(lt - 8..=lt + 8).chain(1016..=1024) {
            for correct in [true, false] {
                let s = RolloutSample::from_lengths(correct, raw, 1024).unwrap();
                let want = if raw > lt {
                    -0.5
                } else if correct {
                    1.0
                } else {
                    0.0
                };
                let got = truncation_reward(&s, &cfg);
                if got != want {
                    bad.push(format!("L_T={lt} raw={raw} correct={correct}: {got}"));
                }
            }
        }
    }
    let m = lengths(&runs.tr.summary);
    let spread = m.iter().copied().fold(f64::NEG_INFINITY, f64::max) - m.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        bad.is_empty() && spread <= 0.05,
        format!("fixture mismatches {}; simulated {} (spread {spread:.4})", bad.len(), fmt3(m)),
    )
}

fn c10_transition_table() -> Verdict {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/relabel_eval_log.csv");
    let records = parse_eval_log(std::fs::File::open(path).unwrap()).unwrap();
    let cut = Cutoffs::default();
    let labels: Vec<_> = records.iter().map(|r| cut.label(r.correct_votes())).collect();
    let t = transition_table(&records, &labels).unwrap();
    let cells = [
        (Easy, Easy, 97),
        (Easy, Medium, 68),
        (Easy, Hard, 93),
        (Medium, Easy, 338),
        (Medium, Medium, 91),
        (Medium, Hard, 81),
        (Hard, Easy, 92),
        (Hard, Medium, 55),
        (Hard, Hard, 85),
    ];
    let cells_ok = cells.iter().all(|&(o, n, c)| t.count(o, n) == c);
    let ok = cells_ok
        && t.orig_totals() == [258, 510, 232]
        && t.new_totals() == [527, 214, 259]
        && t.unchanged() == [97, 91, 85]
        && t.changed() == [161, 419, 147];
    verdict(ok, format!("orig {:?} new {:?} cells exact: {cells_ok}", t.orig_totals(), t.new_totals()))
}

fn c11_thresholded() -> Verdict {
    let cfg = RewardConfig::<f64> { l_min: 0.1, ..RewardConfig::default() };
    let mut r = rng(11);
    let (mut sat_bad, mut max_err) = (0, 0.0f64);
    let grid = (0..=1000).map(|i| i as f64 / 1000.0);
    let random: Vec<f64> = (0..10_000).map(|_| r.random()).collect();
    for l in grid.chain(random) {
        for correct in [true, false] {
            let g: f64 = r.random();
            let s = RolloutSample::from_norm_length(correct, l).unwrap();
            let got = adaptive_length_reward_thresholded(&s, DifficultyScore::new(g).unwrap(), &cfg).unwrap();
            let sign = if correct { 1.0 } else { -1.0 };
            if l <= 0.1 {
                if got != sign {
                    sat_bad += 1;
                }
            } else {
                let k = 10.0 - 8.0 * g;
                let want = sign * (-k * (l - 0.1) / 0.9).exp();
                max_err = max_err.max((got - want).abs());
            }
        }
    }
    verdict(
        sat_bad == 0 && max_err <= 1e-12,
        format!("saturation mismatches {sat_bad}; max |err| above l_min {max_err:.2e}"),
    )
}

fn main() {
    let runs = runs();
    let results = [
        ("1 reward-formula oracle", c1_reward_oracle()),
        ("2 GRDR exactness", c2_grdr()),
        ("3 entropy oracle", c3_entropy()),
        ("4 advantage properties", c4_advantages()),
        ("5 KL and surrogate", c5_kl_surrogate()),
        ("6 simulation trend", c6_trend(&runs)),
        ("7 efficiency", c7_efficiency(&runs)),
        ("8 GA2DR pipeline", c8_ga2dr(&runs)),
        ("9 truncation baseline", c9_truncation(&runs)),
        ("10 transition-table regression", c10_transition_table()),
        ("11 thresholded variant", c11_thresholded()),
    ];
    let mut failed = 0;
    for (name, v) in &results {
        println!("criterion {name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
