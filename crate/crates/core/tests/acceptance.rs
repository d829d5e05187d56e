//! Acceptance suite. Runs sequentially (timings in criterion 5 must not
//! compete with other work) and prints one PASS/FAIL line per criterion,
//! with detail lines indented beneath it.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use facelivt::archive::WeightArchive;
use facelivt::blocks::{Form, MetaBlock, MhlaBlock, TokenMixer};
use facelivt::cli::{probe_image, summarize};
use facelivt::model::{
    config_cost_report, cost_report, instrumented_op_count, mhla_complexity, mhsa_complexity,
    token_mixer_cost, Init, Model, Variant,
};
use facelivt::reparam::{merge_dw_branches, probe_agreement, reparameterize_model, FusionOptions};
use facelivt::tensor::{count_ops, softmax_rows, ConvSpec, Matrix, Tensor};

const MAX_ABS: f32 = 1e-4;
const MIN_COS: f32 = 0.9999;
const EQUIVALENCE_BUDGET_S: f64 = 120.0;
const PROPERTY_BUDGET_S: f64 = 300.0;
const LATENCY_ITERS: usize = 200;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>, details: Vec<String>) -> Self {
        Outcome {
            pass,
            summary: summary.into(),
            details,
        }
    }
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    ((got - want) / want).abs() <= tol
}

fn pct(got: f64, want: f64) -> f64 {
    (got - want) / want * 100.0
}

fn reparameterization_equivalence() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    let (mut worst_abs, mut worst_cos) = (0f32, 1f32);
    for variant in Variant::ALL {
        for seed in [11u64, 22, 33] {
            let train = Model::build(&variant.config(), seed).expect("build");
            let (deploy, _) = reparameterize_model(&train, FusionOptions::ALL, 0).expect("fuse");
            let ok_form = deploy.form() == Form::Deploy;
            let (abs, cos) = probe_agreement(&train, &deploy, 5, 1000 + seed).expect("probe");
            let ok = ok_form && abs < MAX_ABS && cos >= MIN_COS;
            pass &= ok;
            worst_abs = worst_abs.max(abs);
            worst_cos = worst_cos.min(cos);
            details.push(format!(
                "{variant:<5} seed {seed}: max_abs {abs:.3e}  min_cos {cos:.7}  form {}",
                deploy.form()
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed < EQUIVALENCE_BUDGET_S;
    Outcome::new(
        pass,
        format!(
            "reparameterization equivalence: 4 variants x 3 seeds x 5 probes, worst max_abs {worst_abs:.3e} (< {MAX_ABS:e}), \
             worst cosine {worst_cos:.7} (>= {MIN_COS}), {elapsed:.1}s (< {EQUIVALENCE_BUDGET_S}s)"
        ),
        details,
    )
}

fn kernel_fusion_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for &c in &[40usize, 64, 80, 128] {
        for &k in &[3usize, 5, 7] {
            for identity in [false, true] {
                let draw = |rng: &mut ChaCha8Rng, n| {
                    (0..n)
                        .map(|_| rng.random_range(-1.0f32..1.0))
                        .collect::<Vec<_>>()
                };
                let kxk = ConvSpec::new(
                    Tensor::new([c, 1, k, k], draw(&mut rng, c * k * k)).unwrap(),
                    draw(&mut rng, c),
                    1,
                    k / 2,
                    c,
                )
                .unwrap();
                let one = ConvSpec::new(
                    Tensor::new([c, 1, 1, 1], draw(&mut rng, c)).unwrap(),
                    draw(&mut rng, c),
                    1,
                    0,
                    c,
                )
                .unwrap();
                let merged = merge_dw_branches(&kxk, &one, identity).unwrap();
                let centre = k / 2;
                for o in 0..c {
                    for y in 0..k {
                        for x in 0..k {
                            let mut want = kxk.weight.get([o, 0, y, x]);
                            if (y, x) == (centre, centre) {
                                want += one.weight.get([o, 0, 0, 0]);
                                if identity {
                                    want += 1.0;
                                }
                            }
                            checked += 1;
                            mismatches += usize::from(
                                merged.weight.get([o, 0, y, x]).to_bits() != want.to_bits(),
                            );
                        }
                    }
                    checked += 1;
                    mismatches += usize::from(
                        merged.bias[o].to_bits() != (kxk.bias[o] + one.bias[o]).to_bits(),
                    );
                }
            }
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("kernel-level fusion exactness: {checked} kernel and bias elements compared bitwise, {mismatches} mismatches"),
        vec![],
    )
}

fn complexity_formulas() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (heads, r) = (16, 4);
    for (side, c) in [(7usize, 160usize), (4, 320), (7, 256), (4, 512)] {
        let n = side * side;
        let block = MhlaBlock::new(
            (0..heads)
                .map(|_| Matrix::from_fn(n, n * r, |_, _| rng.random_range(-0.1..0.1)))
                .collect(),
            (0..heads)
                .map(|_| Matrix::from_fn(n * r, n, |_, _| rng.random_range(-0.1..0.1)))
                .collect(),
        )
        .unwrap();
        let omega = mhla_complexity(n, c, r);
        let analytic = token_mixer_cost(&TokenMixer::Mhla(block.clone()), c, side).macs;
        let x = Matrix::from_fn(n, c, |_, _| rng.random_range(-1.0..1.0));
        let (out, ops) = count_ops(|| block.forward(&x));
        out.unwrap();
        let instrumented_ok = within(ops.macs as f64, analytic as f64, 0.01);
        pass &= analytic == omega && instrumented_ok;
        let mhsa = mhsa_complexity(n, c);
        details.push(format!(
            "N={n:<3} C={c:<4} analytic {analytic} == 2(N*Nr)C {omega}: {}  instrumented {} ({:+.3}%)  mhsa {mhsa} -> {} cheaper",
            analytic == omega,
            ops.macs,
            pct(ops.macs as f64, analytic as f64),
            if omega < mhsa { "mhla" } else { "mhsa" }
        ));
    }
    for variant in Variant::ALL {
        let model = Model::build(&variant.config(), 4).unwrap();
        let deploy_model = reparameterize_model(&model, FusionOptions::ALL, 0)
            .unwrap()
            .0;
        for m in [&model, &deploy_model] {
            let analytic = cost_report(m).unwrap().total;
            let ops = instrumented_op_count(m, &probe_image(112, 5)).unwrap();
            let ok = within(ops.flops() as f64, analytic.flops as f64, 0.01);
            pass &= ok;
            details.push(format!(
                "{variant:<5} {:<6} whole model: instrumented {} flops vs analytic {} ({:+.3}%)",
                m.form(),
                ops.flops(),
                analytic.flops,
                pct(ops.flops() as f64, analytic.flops as f64)
            ));
        }
    }
    Outcome::new(
        pass,
        "complexity formulas: MHLA analytic = 2(N*Nr)C exactly on stage-3/4 shapes, instrumented within 1%",
        details,
    )
}

fn cost_reconciliation() -> Outcome {
    let deploy = |v: Variant, heads: usize| {
        config_cost_report(&v.config().with_heads(heads), Form::Deploy).unwrap()
    };
    let sli = deploy(Variant::SLi, 16);
    let mli = deploy(Variant::MLi, 16);
    let he8 = deploy(Variant::SLi, 8);
    let m = |v: u64| v as f64 / 1e6;
    let checks = [
        ("S-Li params", m(sli.total.params), 5.05, 0.10),
        ("S-Li FLOPs (MACs)", m(sli.total.macs), 160.0, 0.15),
        ("M-Li params", m(mli.total.params), 9.75, 0.10),
        ("M-Li FLOPs (MACs)", m(mli.total.macs), 386.0, 0.15),
        ("S-Li He=8 params", m(he8.total.params), 4.09, 0.15),
        (
            "He16 - He8 params",
            m(sli.total.params - he8.total.params),
            0.96,
            0.15,
        ),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (name, got, want, tol) in checks {
        let ok = within(got, want, tol);
        pass &= ok;
        details.push(format!(
            "{name:<18} {got:>9.4} M vs {want:>7.2} M  {:+6.2}% (tolerance +-{:.0}%) {}",
            pct(got, want),
            tol * 100.0,
            if ok { "ok" } else { "OUT" }
        ));
    }
    for r in [&sli, &mli, &he8] {
        let printed = r.to_text().contains("published params");
        pass &= printed && r.deviation.is_some();
    }
    Outcome::new(
        pass,
        "cost reconciliation: S-Li, M-Li and He=8 within tolerance, deviations reported",
        details,
    )
}

fn interleaved_medians(a: &Model, b: &Model, iters: usize) -> (f64, f64) {
    let image = probe_image(112, 6);
    for _ in 0..3 {
        a.forward(&image).unwrap();
        b.forward(&image).unwrap();
    }
    let (mut ta, mut tb) = (Vec::with_capacity(iters), Vec::with_capacity(iters));
    for i in 0..iters {
        // Alternate which model goes first so neither always follows the other.
        let order: [(&Model, &mut Vec<f64>); 2] = if i % 2 == 0 {
            [(a, &mut ta), (b, &mut tb)]
        } else {
            [(b, &mut tb), (a, &mut ta)]
        };
        for (m, times) in order {
            let t = Instant::now();
            m.forward(&image).unwrap();
            times.push(t.elapsed().as_secs_f64() * 1e6);
        }
    }
    (summarize(&ta).1, summarize(&tb).1)
}

fn latency_ordering() -> Outcome {
    let sli_train = Model::build(&Variant::SLi.config(), 8).unwrap();
    let (sli_deploy, _) = reparameterize_model(&sli_train, FusionOptions::ALL, 0).unwrap();
    let s_train = Model::build(&Variant::S.config(), 8).unwrap();
    let (s_deploy, _) = reparameterize_model(&s_train, FusionOptions::ALL, 0).unwrap();

    let (train_med, deploy_med) = interleaved_medians(&sli_train, &sli_deploy, LATENCY_ITERS);
    let (sli_med, s_med) = interleaved_medians(&sli_deploy, &s_deploy, LATENCY_ITERS);
    let first = deploy_med <= train_med;
    let second = sli_med < s_med;
    Outcome::new(
        first && second,
        format!("directional latency over {LATENCY_ITERS} interleaved iterations: deploy <= train and S-Li < S (deploy)"),
        vec![
            format!(
                "S-Li train median {:.0} us, deploy median {:.0} us ({:+.2}%) {}",
                train_med,
                deploy_med,
                pct(deploy_med, train_med),
                if first { "ok" } else { "SLOWER" }
            ),
            format!(
                "S-Li deploy median {:.0} us, S deploy median {:.0} us ({:+.2}%) {}",
                sli_med,
                s_med,
                pct(sli_med, s_med),
                if second { "ok" } else { "NOT FASTER" }
            ),
        ],
    )
}

fn desk_scale_properties() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    let mut check = |name: &str, ok: bool| {
        pass &= ok;
        details.push(format!("{name}: {}", if ok { "ok" } else { "FAILED" }));
    };

    let mut shapes_ok = true;
    let mut archives_ok = true;
    for variant in Variant::ALL {
        let config = variant.config();
        let train = Model::build(&config, 9).unwrap();
        let trace = train.forward_traced(&probe_image(112, 9)).unwrap();
        let dims: Vec<usize> = config.stages.iter().map(|s| s.dim).collect();
        let want: Vec<[usize; 4]> = [28, 14, 7, 4]
            .iter()
            .zip(&dims)
            .map(|(&s, &c)| [1, c, s, s])
            .collect();
        shapes_ok &= trace.stem_shape == [1, dims[0], 28, 28]
            && trace.stage_shapes == want
            && trace.embedding.len() == 512;

        let (deploy, _) = reparameterize_model(&train, FusionOptions::ALL, 0).unwrap();
        for m in [&train, &deploy] {
            let bytes = m.to_archive().to_bytes();
            let back = Model::from_archive(&WeightArchive::from_bytes(&bytes).unwrap()).unwrap();
            archives_ok &= back == *m && back.to_archive().to_bytes() == bytes;
        }
    }
    check(
        "shape pipeline 28/14/7/4 with preset widths, 512-d embedding, all variants",
        shapes_ok,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut softmax_ok = true;
    for _ in 0..50 {
        let x = Matrix::from_fn(rng.random_range(1..20), rng.random_range(1..50), |_, _| {
            rng.random_range(-30.0..30.0)
        });
        let s = softmax_rows(&x);
        softmax_ok &= (0..s.rows())
            .all(|i| (s.row(i).iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
    }
    let model = Model::build(&Variant::S.config(), 10).unwrap();
    let TokenMixer::Mhsa(mhsa) = &model.stages[2].blocks[0].token_mixer else {
        unreachable!("S stage 3 is MHSA")
    };
    let tokens = Matrix::from_fn(49, 160, |_, _| rng.random_range(-1.0..1.0));
    for map in mhsa.attention_maps(&tokens).unwrap() {
        softmax_ok &=
            (0..49).all(|i| (map.row(i).iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
    }
    check(
        "softmax rows (random matrices and MHSA attention maps) sum to 1 within 1e-6",
        softmax_ok,
    );

    let mut identity_ok = true;
    for variant in Variant::ALL {
        let config = variant.config();
        let model = Model::build_with(&config, Init::Identity { seed: 1 }).unwrap();
        for (stage, sc) in model.stages.iter().zip(&config.stages) {
            let x = Tensor::from_fn([1, sc.dim, sc.resolution, sc.resolution], |_| {
                rng.random_range(-1.0..1.0)
            });
            identity_ok &= stage
                .blocks
                .iter()
                .all(|b: &MetaBlock| b.forward(&x).unwrap() == x);
        }
    }
    check(
        "residual integrity: zeroed mixers give the exact identity in every block",
        identity_ok,
    );

    let mut heads_ok = true;
    for (side, c) in [(7usize, 160usize), (4, 320), (7, 256), (4, 512)] {
        let n = side * side;
        let mut block = MhlaBlock::new(
            (0..16)
                .map(|_| Matrix::from_fn(n, 4 * n, |_, _| rng.random_range(-0.2..0.2)))
                .collect(),
            (0..16)
                .map(|_| Matrix::from_fn(4 * n, n, |_, _| rng.random_range(-0.2..0.2)))
                .collect(),
        )
        .unwrap();
        let x = Matrix::from_fn(n, c, |_, _| rng.random_range(-1.0..1.0));
        let before = block.forward(&x).unwrap();
        let h = rng.random_range(0..16);
        block.w_in[h] = Matrix::zeros(n, 4 * n);
        let after = block.forward(&x).unwrap();
        let d = c / 16;
        for i in 0..n {
            for j in 0..c {
                let (a, b) = (after.get(i, j), before.get(i, j));
                heads_ok &= if j / d == h {
                    a == 0.0
                } else {
                    a.to_bits() == b.to_bits()
                };
            }
        }
    }
    check("MHLA head independence: zeroing one head zeroes exactly its channels, others bit-identical", heads_ok);
    check(
        "archive round trip bit-exact for train and deploy forms of every variant",
        archives_ok,
    );

    let elapsed = start.elapsed().as_secs_f64();
    Outcome::new(
        pass,
        format!("desk-scale property substitutes: shapes, softmax, residual identity, head independence, archives ({elapsed:.1}s)"),
        details,
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let criteria: [Criterion; 6] = [
        ("1", reparameterization_equivalence),
        ("2", kernel_fusion_exactness),
        ("3", complexity_formulas),
        ("4", cost_reconciliation),
        ("5", latency_ordering),
        ("6", desk_scale_properties),
    ];
    let mut failed = 0;
    for (id, run) in criteria {
        let outcome = run();
        println!(
            "[{}] criterion {id}: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.summary
        );
        for d in &outcome.details {
            println!("       {d}");
        }
        failed += usize::from(!outcome.pass);
    }
    let total = start.elapsed().as_secs_f64();
    let in_budget = total < PROPERTY_BUDGET_S;
    println!(
        "[{}] whole suite: {:.1}s (< {PROPERTY_BUDGET_S}s)",
        if in_budget { "PASS" } else { "FAIL" },
        total
    );
    failed += usize::from(!in_budget);
    println!("acceptance: {} of 7 checks passed", 7 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
