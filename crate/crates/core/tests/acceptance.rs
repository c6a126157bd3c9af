//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fhesift::graph::{lower, DenSign, Expr, ExprId, Graph, LowerOptions, Rational};
use fhesift::kernels::{
    bin_mask, bin_mask_tan, running_max, vec_argmax_onehot, vec_max, weighted_histogram, Gradient,
    HistogramSpec,
};
use fhesift::pipeline::oracle::pyramid;
use fhesift::pipeline::{build_program, diff_keypoints, Mode, PipelineRun, RunConfig};
use fhesift::protocol::{run_deferred, run_interactive, Client, Program, ProtocolConfig};
use fhesift::sim::{decrypt_calls, encrypt, Role, SimParams};
use fhesift::{image::Image, pipeline, synth};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// One-hot and conservation checks gathered from criteria 5 and 7.
#[derive(Default)]
struct Conservation {
    checked: usize,
    worst_onehot: f64,
    worst_sum: f64,
}

impl Conservation {
    fn onehot(&mut self, sum: f64) {
        self.checked += 1;
        self.worst_onehot = self.worst_onehot.max((sum - 1.0).abs());
    }
    fn total(&mut self, got: f64, want: f64) {
        self.checked += 1;
        self.worst_sum = self.worst_sum.max((got - want).abs());
    }
}

fn inputs(g: &mut Graph, p: &SimParams, vals: &[f64]) -> Vec<ExprId> {
    vals.iter().map(|&v| g.input(encrypt(v, p))).collect()
}

// 1. ⌈log₂ N⌉ select-levels for the tournament, N for the running fold.
fn depth_law() -> Verdict {
    let p = SimParams::exact(300);
    let client = Client::new(p);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut notes = Vec::new();
    let mut ok = true;
    for k in 1..=8u32 {
        let n = 1usize << k;
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let want_max = vals.iter().cloned().fold(f64::MIN, f64::max);
        for (tournament, want_levels) in [(true, k), (false, n as u32)] {
            let mut g = Graph::new();
            let xs = inputs(&mut g, &p, &vals);
            let root = if tournament {
                vec_max(&mut g, &xs).unwrap()
            } else {
                running_max(&mut g, &xs).unwrap()
            };
            let prog = Program {
                graph: g,
                outputs: vec![root],
            };
            let out = run_interactive(&prog, &p, &client, &ProtocolConfig::with_seed(0)).unwrap();
            let used = out.depth.max_consumed();
            if used != want_levels || (out.values[0] - want_max).abs() > 1e-9 {
                ok = false;
                notes.push(format!(
                    "{} N={n}: {used} levels",
                    if tournament { "vec_max" } else { "running_max" }
                ));
            }
        }
    }
    let d = if ok {
        "vec_max uses ⌈log₂N⌉ and running_max N levels for N = 2..256".to_string()
    } else {
        notes.join("; ")
    };
    verdict(ok, d)
}

// 2. Two requests and the pinned normal form.
fn deferred_example() -> Verdict {
    let p = SimParams::exact(10);
    let mut g = Graph::new();
    let v: Vec<ExprId> = ["x", "y", "z", "w", "c", "d", "e"]
        .iter()
        .map(|n| g.input_labeled(n, encrypt(0.0, &p)))
        .collect();
    let (x, y, z, w, c, d, e) = (v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
    let b0 = g.gt(x, y);
    let b1 = g.gt(z, w);
    let b2 = g.ge(y, x);
    let t0 = g.mul(b0, c);
    let t1 = g.mul(b1, d);
    let t2 = g.mul(b2, e);
    let root = g.sum(&[t0, t1, t2]);
    let lowered = lower(&mut g, &[root], LowerOptions::default()).unwrap();
    let requests = lowered
        .defs
        .iter()
        .filter(|d| matches!(d, fhesift::graph::SymbolicDef::Compare { .. }))
        .count();
    let got = format!("requests {requests}\n{}", lowered.slots[0].dump(&g));
    let want = include_str!("golden/deferred_example.txt");
    verdict(
        got == want,
        if got == want {
            format!("{requests} requests, residual matches golden file")
        } else {
            format!("got {got:?}")
        },
    )
}

struct SoundnessStats {
    cases: usize,
    resampled: usize,
    worst: f64,
    server_decrypts: u64,
}

// 3. Deferred = interactive = branchy reference on random expressions.
fn deferred_soundness() -> (Verdict, u64) {
    const CASES: usize = 10_000;
    const BATCH: usize = 50;
    let p = SimParams::exact(40);
    let client = Client::new(p);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut st = SoundnessStats {
        cases: 0,
        resampled: 0,
        worst: 0.0,
        server_decrypts: 0,
    };
    let mut mismatches = 0;
    while st.cases < CASES {
        let mut g = Graph::new();
        let mut roots = Vec::new();
        let mut expected = Vec::new();
        while roots.len() < BATCH {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut budget = common::Budget {
                comparisons: 4,
                sqrts: 2,
            };
            let tree = common::random_tree(&mut rng, 8, 4, &mut budget);
            let (want, margin) = common::eval_branchy(&tree, &x);
            let mag = common::magnitude(&tree, &x).max(1.0);
            if margin < 1e-6 * mag {
                st.resampled += 1;
                continue;
            }
            let ids = inputs(&mut g, &p, &x);
            roots.push(common::build(&mut g, &tree, &ids));
            expected.push((want, mag));
        }
        let mut prog = Program {
            graph: g,
            outputs: roots,
        };
        let before = decrypt_calls(Role::Server);
        let cfg = ProtocolConfig::with_seed(st.cases as u64);
        let inter = run_interactive(&prog, &p, &client, &cfg).unwrap();
        let def = run_deferred(&mut prog, &p, &client, &cfg, LowerOptions::default()).unwrap();
        st.server_decrypts += decrypt_calls(Role::Server) - before;
        for (i, &(want, mag)) in expected.iter().enumerate() {
            let e1 = (inter.values[i] - want).abs() / mag;
            let e2 = (def.values[i] - want).abs() / mag;
            let e = e1.max(e2);
            st.worst = st.worst.max(e);
            if e > 1e-9 || def.trace.rounds != 1 {
                mismatches += 1;
            }
        }
        st.cases += BATCH;
    }
    (
        verdict(
            mismatches == 0,
            format!(
                "{} expressions, {mismatches} mismatches, worst relative error {:.1e} (tol 1e-9), {} near-tie draws skipped",
                st.cases, st.worst, st.resampled
            ),
        ),
        st.server_decrypts,
    )
}

// 4. Cross-multiplied comparisons versus division then compare.
fn rational_deferral() -> (Verdict, u64) {
    const CASES: usize = 10_000;
    const BATCH: usize = 100;
    let p = SimParams::exact(12);
    let client = Client::new(p);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut disagree = 0;
    let mut decrypts = 0;
    let mut done = 0;
    let mut counts = [0usize; 3];
    while done < CASES {
        let mut g = Graph::new();
        let mut outs = Vec::new();
        let mut want = Vec::new();
        for _ in 0..BATCH {
            let mut side = |g: &mut Graph, rng: &mut ChaCha8Rng| {
                let num: f64 = rng.gen_range(-3.0..3.0);
                let mut den: f64 = 10f64.powf(rng.gen_range(-8.9..0.5));
                if rng.gen_bool(0.5) {
                    den = -den;
                }
                let sign = match rng.gen_range(0..3) {
                    0 => DenSign::Unknown,
                    _ if den > 0.0 => DenSign::Positive,
                    _ => DenSign::Negative,
                };
                counts[match sign {
                    DenSign::Positive => 0,
                    DenSign::Negative => 1,
                    DenSign::Unknown => 2,
                }] += 1;
                let n = g.input(encrypt(num, &p));
                let d = g.input(encrypt(den, &p));
                (Rational::new(n, d, sign, "test"), num / den)
            };
            let (a, qa) = side(&mut g, &mut rng);
            let (b, qb) = side(&mut g, &mut rng);
            let (o, w) = match rng.gen_range(0..4) {
                0 => (g.rational_gt(&a, &b).unwrap(), qa > qb),
                1 => (g.rational_lt(&a, &b).unwrap(), qa < qb),
                2 => (g.rational_ge(&a, &b).unwrap(), qa >= qb),
                _ => (g.rational_le(&a, &b).unwrap(), qa <= qb),
            };
            outs.push(o);
            want.push(w);
        }
        let prog = Program {
            graph: g,
            outputs: outs,
        };
        let before = decrypt_calls(Role::Server);
        let out =
            run_interactive(&prog, &p, &client, &ProtocolConfig::with_seed(done as u64)).unwrap();
        decrypts += decrypt_calls(Role::Server) - before;
        for (v, w) in out.values.iter().zip(&want) {
            if (*v > 0.5) != *w {
                disagree += 1;
            }
        }
        done += BATCH;
    }
    (
        verdict(
            disagree == 0,
            format!(
                "{done} comparisons ({} positive, {} negative, {} unknown-sign denominators), {disagree} disagreements",
                counts[0], counts[1], counts[2]
            ),
        ),
        decrypts,
    )
}

fn atan2_bin(dx: f64, dy: f64, n: usize) -> usize {
    let a = dy.atan2(dx).rem_euclid(TAU);
    ((a / (TAU / n as f64)).floor() as usize).min(n - 1)
}

/// Signed distance of the direction from the nearest boundary, in the units
/// of `cos a·dy − sin a·dx`.
fn boundary_distance(dx: f64, dy: f64, n: usize) -> f64 {
    (0..n)
        .map(|j| {
            let a = TAU * j as f64 / n as f64;
            (a.cos() * dy - a.sin() * dx).abs()
        })
        .fold(f64::INFINITY, f64::min)
}

// 5. Full-circle binning against atan2, tan form on dx > 0. Also feeds
// criterion 6 with 1000 weighted histograms and their argmax.
fn histogram_binning(cons: &mut Conservation) -> Verdict {
    const SAMPLES: usize = 100_000;
    const BINS: usize = 36;
    let spec = HistogramSpec::uniform(BINS).unwrap();
    let p = SimParams::exact(20);
    let mut g = Graph::new();
    let xs = inputs(&mut g, &p, &[0.0, 0.0, 1.0]);
    let grad = Gradient {
        dx: xs[0],
        dy: xs[1],
        weight: xs[2],
    };
    let full: Vec<ExprId> = (0..BINS)
        .map(|i| bin_mask(&mut g, &grad, &spec, i))
        .collect();
    let tan: Vec<ExprId> = (0..BINS)
        .map(|i| bin_mask_tan(&mut g, &grad, &spec, i))
        .collect();
    let roots: Vec<ExprId> = full.iter().chain(&tan).copied().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut checked, mut tan_checked, mut bad, mut tan_bad, mut skipped) = (0, 0, 0, 0, 0);
    let mut samples = Vec::with_capacity(SAMPLES);
    for _ in 0..SAMPLES {
        let dx: f64 = rng.gen_range(-1.0..1.0);
        let dy: f64 = rng.gen_range(-1.0..1.0);
        samples.push((dx, dy));
        if boundary_distance(dx, dy, BINS) <= 1e-9 {
            skipped += 1;
            continue;
        }
        let v = g.eval_direct(&roots, &[dx, dy, 1.0]);
        let want = atan2_bin(dx, dy, BINS);
        checked += 1;
        if (0..BINS).any(|i| (v[i] > 0.5) != (i == want)) {
            bad += 1;
        }
        if dx > 0.0 {
            tan_checked += 1;
            if (0..BINS).any(|i| (v[BINS + i] > 0.5) != (i == want)) {
                tan_bad += 1;
            }
        }
    }

    // histograms of 100 samples each with random weights
    const PER: usize = 100;
    let mut h = Graph::new();
    let hx = inputs(&mut h, &p, &vec![0.0; 3 * PER]);
    let grads: Vec<Gradient> = (0..PER)
        .map(|i| Gradient {
            dx: hx[3 * i],
            dy: hx[3 * i + 1],
            weight: hx[3 * i + 2],
        })
        .collect();
    let bins = weighted_histogram(&mut h, &grads, &spec);
    let (_, onehot) = vec_argmax_onehot(&mut h, &bins).unwrap();
    let hroots: Vec<ExprId> = bins.iter().chain(&onehot.mask).copied().collect();
    for chunk in samples.chunks(PER) {
        let mut vals = Vec::with_capacity(3 * PER);
        let mut total = 0.0;
        for &(dx, dy) in chunk {
            let w: f64 = rng.gen_range(0.0..2.0);
            total += w;
            vals.extend([dx, dy, w]);
        }
        let v = h.eval_direct(&hroots, &vals);
        cons.total(v[..BINS].iter().sum(), total);
        cons.onehot(v[BINS..].iter().sum());
    }

    verdict(
        bad == 0 && tan_bad == 0,
        format!(
            "{checked} full-circle samples ({bad} wrong), {tan_checked} tan-form samples with dx > 0 ({tan_bad} wrong), {skipped} within 1e-9 of a boundary"
        ),
    )
}

struct ImageRuns {
    name: String,
    plain: PipelineRun,
    inter: PipelineRun,
    def: PipelineRun,
    comparison_depth: usize,
}

/// Longest chain of client-resolved values from any output, counted
/// directly on the graph.
fn comparison_depth(g: &Graph, roots: &[ExprId]) -> usize {
    const UNSEEN: u32 = u32::MAX;
    let mut depth = vec![UNSEEN; g.len()];
    let children = |id: ExprId| -> (Vec<ExprId>, bool) {
        match g.node(id) {
            Expr::Cipher(_) | Expr::Plain(_) => (vec![], false),
            Expr::Add(a, b) | Expr::Mul(a, b) => (vec![a, b], false),
            Expr::Neg(a) => (vec![a], false),
            Expr::BoolVar(c) => {
                let c = g.comparison(c);
                (vec![c.lhs, c.rhs], true)
            }
            Expr::Sqrt(s) => (vec![g.sqrt_node(s).arg], true),
        }
    };
    let mut stack: Vec<(ExprId, bool)> = roots.iter().map(|&r| (r, false)).collect();
    while let Some((id, expanded)) = stack.pop() {
        if depth[id.index()] != UNSEEN {
            continue;
        }
        let (kids, counts) = children(id);
        if expanded {
            let d = kids.iter().map(|k| depth[k.index()]).max().unwrap_or(0);
            depth[id.index()] = d + counts as u32;
        } else {
            stack.push((id, true));
            for k in kids {
                if depth[k.index()] == UNSEEN {
                    stack.push((k, false));
                }
            }
        }
    }
    roots
        .iter()
        .map(|r| depth[r.index()] as usize)
        .max()
        .unwrap_or(0)
}

fn run_modes(name: &str, img: &Image, seed: u64) -> ImageRuns {
    let mut cfg = RunConfig::default();
    let mut run = |mode| {
        cfg.pipeline.mode = mode;
        pipeline::run_pipeline(img, &cfg, seed).unwrap()
    };
    let plain = run(Mode::Plaintext);
    let inter = run(Mode::Interactive);
    let def = run(Mode::Deferred);
    let prog = build_program(img, &RunConfig::default()).unwrap();
    let comparison_depth = comparison_depth(&prog.program.graph, &prog.program.outputs);
    ImageRuns {
        name: name.to_string(),
        plain,
        inter,
        def,
        comparison_depth,
    }
}

/// Descriptor conservation and one-hot sums over every candidate.
fn pipeline_conservation(img: &Image, r: &PipelineRun, cons: &mut Conservation) {
    let cfg = RunConfig::default().pipeline;
    let pyr = pyramid(img, &cfg);
    let layout = r.layout.unwrap();
    let stride = layout.stride();
    let half = cfg.descriptor_cells * cfg.descriptor_cell_size / 2;
    for (i, c) in r.candidates.iter().enumerate() {
        let slots = &r.values[i * stride..(i + 1) * stride];
        cons.onehot(slots[layout.onehot()].iter().sum());
        let l = &pyr[c.octave][c.scale];
        let mut want = 0.0;
        for y in c.y - half..c.y + half {
            for x in c.x - half..c.x + half {
                let dx = l.get(x + 1, y) - l.get(x - 1, y);
                let dy = l.get(x, y + 1) - l.get(x, y - 1);
                want += dx * dx + dy * dy;
            }
        }
        cons.total(slots[layout.descriptor()].iter().sum(), want);
    }
}

// 7. Plaintext, interactive and deferred keypoint sets coincide.
fn mode_equivalence(runs: &[ImageRuns]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let excl = &r.plain.exclusions;
        let a = diff_keypoints(&r.plain.keypoints, &r.inter.keypoints, excl);
        let b = diff_keypoints(&r.plain.keypoints, &r.def.keypoints, excl);
        let c = diff_keypoints(&r.inter.keypoints, &r.def.keypoints, &[]);
        let same =
            a.identical() && b.identical() && c.identical() && c.orientation_compared == c.matched;
        ok &= same;
        parts.push(format!(
            "{} {} kp{} excl {}+{}",
            r.name,
            r.plain.keypoints.len(),
            if same { "" } else { " MISMATCH" },
            excl.len(),
            r.plain.orientation_exclusions.len()
        ));
    }
    verdict(ok, parts.join(", "))
}

// 8. One deferred round; interactive rounds equal the dependency depth.
fn round_law(runs: &[ImageRuns]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let dr = r.def.trace.as_ref().unwrap().rounds;
        let ir = r.inter.trace.as_ref().unwrap().rounds;
        ok &= dr == 1 && ir == r.comparison_depth;
        parts.push(format!("{} {dr}/{ir}/{}", r.name, r.comparison_depth));
    }
    verdict(
        ok,
        format!("deferred/interactive/measured depth: {}", parts.join(", ")),
    )
}

// 9. Same-size images give identical operation counts and traffic.
fn obliviousness(runs: &[ImageRuns]) -> Verdict {
    let base = &runs[0];
    let mut compared = 0;
    let mut ok = true;
    let mut diffs = Vec::new();
    for r in &runs[1..] {
        if r.inter.candidates.len() != base.inter.candidates.len() {
            continue;
        }
        compared += 1;
        for (x, y) in [(&base.inter, &r.inter), (&base.def, &r.def)] {
            for (what, same) in [
                ("census", x.census == y.census),
                ("trace", x.trace == y.trace),
                ("depth", x.depth == y.depth),
            ] {
                if !same {
                    ok = false;
                    diffs.push(format!("{} {} {what}", r.name, y.mode));
                }
            }
        }
    }
    let t = base.inter.trace.as_ref().unwrap();
    if !ok {
        return verdict(
            false,
            format!("differs from {}: {}", base.name, diffs.join(", ")),
        );
    }
    verdict(
        compared >= 1,
        format!(
            "{} images compared with {}: census, batch sizes and bytes identical in both modes ({} interactive batches, {} requests)",
            compared + 1,
            base.name,
            t.batches.len(),
            t.real_requests() + t.decoy_requests()
        ),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Verdict, Duration, Option<Duration>)> = Vec::new();
    let mut cons = Conservation::default();
    let mut server_decrypts = 0u64;
    let timed = |f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed())
    };

    let (v, t) = timed(&mut depth_law);
    results.push((1, "depth law", v, t, Some(Duration::from_secs(1))));
    let (v, t) = timed(&mut deferred_example);
    results.push((2, "deferred example", v, t, Some(Duration::from_secs(1))));
    let (v, t) = timed(&mut || {
        let (v, d) = deferred_soundness();
        server_decrypts += d;
        v
    });
    results.push((3, "deferred soundness", v, t, Some(Duration::from_secs(30))));
    let (v, t) = timed(&mut || {
        let (v, d) = rational_deferral();
        server_decrypts += d;
        v
    });
    results.push((4, "rational deferral", v, t, Some(Duration::from_secs(5))));
    let (v, t) = timed(&mut || histogram_binning(&mut cons));
    results.push((5, "histogram binning", v, t, Some(Duration::from_secs(10))));

    let start = Instant::now();
    let mut images: Vec<(String, Image)> = synth::synthetic_set(32)
        .into_iter()
        .map(|(n, i)| (n.to_string(), i))
        .collect();
    images.push(("natural64".into(), synth::natural(64, 1)));
    let mut runs = Vec::new();
    for (i, (name, img)) in images.iter().enumerate() {
        let r = run_modes(name, img, 100 + i as u64);
        pipeline_conservation(img, &r.inter, &mut cons);
        pipeline_conservation(img, &r.def, &mut cons);
        server_decrypts += r.inter.server_decrypts + r.def.server_decrypts;
        runs.push(r);
    }
    let v7 = mode_equivalence(&runs);
    let t7 = start.elapsed();

    let v6 = verdict(
        cons.worst_onehot <= 1e-6 && cons.worst_sum <= 1e-6,
        format!(
            "{} checks, max |Σmask − 1| {:.1e}, max |Σbins − Σweights| {:.1e} (tol 1e-6)",
            cons.checked, cons.worst_onehot, cons.worst_sum
        ),
    );
    results.push((6, "one-hot and conservation", v6, Duration::ZERO, None));
    results.push((
        7,
        "pipeline mode equivalence",
        v7,
        t7,
        Some(Duration::from_secs(300)),
    ));
    results.push((8, "round law", round_law(&runs), Duration::ZERO, None));
    results.push((
        9,
        "obliviousness",
        obliviousness(&runs),
        Duration::ZERO,
        None,
    ));
    results.push((
        10,
        "no server decryption",
        verdict(
            server_decrypts == 0,
            format!("{server_decrypts} server-side decrypt calls across criteria 3, 4 and 7"),
        ),
        Duration::ZERO,
        None,
    ));

    let mut failed = 0;
    println!();
    for (n, name, v, t, limit) in &results {
        let in_time = limit.is_none_or(|l| *t < l);
        let pass = v.pass && in_time;
        failed += !pass as usize;
        let timing = match limit {
            Some(l) => format!(" [{:.2} s, limit {} s]", t.as_secs_f64(), l.as_secs()),
            None => String::new(),
        };
        println!(
            "criterion {n:>2} {}: {name}: {}{timing}",
            if pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!(
        "\n{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
