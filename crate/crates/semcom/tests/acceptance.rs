//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand::rngs::StdRng;
use semcom::report::{read_round_log_csv, read_sweep_csv};
use semcom_core::channel::{ChannelKind, ChannelModel};
use semcom_core::csa::{sa_loss, CovarianceMatrix, CsaScenario, RoundLog, Side};
use semcom_core::dtjscc::{quantize, Codebook, SemanticFeatures};
use semcom_core::modem::{demodulate_hard, demodulate_hard_per_symbol, modulate, BitStream, Modulation, DEFAULT_APSK_GAMMA};
use semcom_core::nn::{softmax_cross_entropy, Activation, Network, Tensor};
use semcom_core::ComplexSample;
use statrs::function::erf::erfc;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn semcom(args: &[&str], dir: &Path) -> String {
    let o = Command::new(env!("CARGO_BIN_EXE_semcom")).args(args).current_dir(dir).env_remove("SEMCOM_SEED").output().unwrap();
    assert!(o.status.success(), "semcom {args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn printed_value(text: &str, label: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(label)).unwrap_or_else(|| panic!("no {label} line"));
    line[label.len()..].split_whitespace().next().unwrap().parse().unwrap()
}

fn link_budget(dir: &Path) -> Outcome {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/ka_band.cfg");
    let start = Instant::now();
    let text = semcom(&["linkbudget", "--config", cfg.to_str().unwrap()], dir);
    let elapsed = start.elapsed();
    // Handbook form with d in km and f in MHz.
    let fspl = 20.0 * 600f64.log10() + 20.0 * 28_000f64.log10() + 32.45;
    let total = fspl + 0.3 + 0.5;
    let (got_fspl, got_total) = (printed_value(&text, "FSPL"), printed_value(&text, "total"));
    let err = (got_fspl - fspl).abs().max((got_total - total).abs());
    let pass = err < 1e-3 && (got_fspl - 176.956).abs() < 1e-3 && (got_total - 177.756).abs() < 1e-3 && elapsed < Duration::from_secs(1);
    outcome(pass, format!("FSPL {got_fspl:.6} total {got_total:.6} dB, oracle {fspl:.6}/{total:.6}, max err {err:.2e}, {elapsed:.2?}"))
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> (f64, f64) {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

fn channel_statistics() -> Outcome {
    let start = Instant::now();
    let n = 100_000;
    let mut rng = StdRng::seed_from_u64(11);
    let model = ChannelModel::new(ChannelKind::LeoRician).with_rician_factor(0.0);
    let rician: Vec<f64> = (0..n).map(|_| model.sample_gain(&mut rng).unwrap().norm()).collect();
    let mut other = StdRng::seed_from_u64(12);
    let rayleigh: Vec<f64> = (0..n).map(|_| (-(1.0 - other.random::<f64>()).ln()).sqrt()).collect();
    let (d, p) = ks_two_sample(rician, rayleigh);
    let mut worst = 0.0f64;
    for r in [0.0, 2.8, 10.0] {
        for zeta in [1.0, 0.37] {
            let mut m = ChannelModel::new(ChannelKind::LeoRician).with_rician_factor(r);
            m.zeta_linear = zeta;
            let mean = (0..n).map(|_| m.sample_gain(&mut rng).unwrap().norm_sqr()).sum::<f64>() / n as f64;
            worst = worst.max((mean / zeta - 1.0).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = p > 0.01 && worst < 0.02 && elapsed < Duration::from_secs(10);
    outcome(pass, format!("KS D {d:.5} p {p:.3}; worst E|g|^2 deviation {:.3}%, {elapsed:.2?}", 100.0 * worst))
}

fn random_bits(n: usize, rng: &mut StdRng) -> BitStream {
    BitStream::from_bits((0..n).map(|_| rng.random_range(0..2u8)).collect())
}

fn modem_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(21);
    let mut noiseless_ok = true;
    for m in [Modulation::Psk16, Modulation::Apsk16] {
        let c = m.constellation(DEFAULT_APSK_GAMMA).unwrap();
        let bits = random_bits(40_000, &mut rng);
        let back = demodulate_hard(&modulate(&bits, &c).symbols, ComplexSample::new(1.0, 0.0), &c).unwrap();
        noiseless_ok &= back == bits;
    }
    let c = Modulation::Psk16.constellation(DEFAULT_APSK_GAMMA).unwrap();
    let symbols = 1_000_000;
    let bits = random_bits(4 * symbols, &mut rng);
    let tx = modulate(&bits, &c).symbols;
    let awgn = ChannelModel::new(ChannelKind::Awgn);
    let mut details = Vec::new();
    let mut ser_ok = true;
    for es_n0_db in [10.0f64, 15.0] {
        let es_n0 = 10f64.powf(es_n0_db / 10.0);
        let es = tx.iter().map(|s| s.norm_sqr()).sum::<f64>() / tx.len() as f64;
        let rx = awgn.transmit(&tx, es / es_n0, &mut rng).unwrap();
        let out = demodulate_hard_per_symbol(&rx, &c).unwrap();
        let errors = (0..symbols).filter(|&s| out.read_word(4 * s, 4) != bits.read_word(4 * s, 4)).count();
        let ser = errors as f64 / symbols as f64;
        let x = (2.0 * es_n0).sqrt() * (std::f64::consts::PI / 16.0).sin();
        let reference = 2.0 * 0.5 * erfc(x / std::f64::consts::SQRT_2);
        let ratio = ser / reference;
        ser_ok &= (0.5..=2.0).contains(&ratio);
        details.push(format!("{es_n0_db} dB SER {ser:.4e} vs {reference:.4e}"));
    }
    let elapsed = start.elapsed();
    let pass = noiseless_ok && ser_ok && elapsed < Duration::from_secs(30);
    outcome(pass, format!("noiseless BER 0: {noiseless_ok}; {}; {elapsed:.2?}", details.join(", ")))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn central<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Mean cross-entropy of `logits` against `labels`, computed independently.
fn ce(logits: &Tensor, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let z = logits.row(r);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / labels.len() as f64
}

fn gaussian_tensor(rows: usize, cols: usize, scale: f64, rng: &mut StdRng) -> Tensor {
    let d = rand_distr::Normal::new(0.0, scale).unwrap();
    Tensor::from_vec(&[rows, cols], (0..rows * cols).map(|_| rng.sample(d)).collect()).unwrap()
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let (mut worst_ce, mut worst_sa, mut worst_eq) = (0.0f64, 0.0f64, 0.0f64);
    for inst in 0..10u64 {
        let mut rng = StdRng::seed_from_u64(100 + inst);
        let (b, a, c) = (6, 5, 4);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();

        let net = Network::mlp(&[7, 9, c], Activation::Softplus, Activation::Identity, &mut rng).unwrap();
        let x = gaussian_tensor(b, 7, 1.0, &mut rng);
        let cache = net.forward_cached(&x).unwrap();
        let (loss, dz) = softmax_cross_entropy(&cache.output, &labels).unwrap();
        worst_eq = worst_eq.max((loss - ce(&cache.output, &labels)).abs());
        let analytic = net.backward(&cache, &dz).unwrap().flat();
        let mut probe = net.clone();
        for (i, &g) in analytic.iter().enumerate() {
            let orig = *probe.param_mut(i);
            let num = central(
                |v| {
                    *probe.param_mut(i) = v;
                    ce(&probe.forward(&x).unwrap(), &labels)
                },
                orig,
                h,
            );
            *probe.param_mut(i) = orig;
            worst_ce = worst_ce.max(rel_err(g, num));
        }

        let l = Network::mlp(&[a, c], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let feats = gaussian_tensor(b, a, 1.0, &mut rng);
        let cov_data: Vec<f64> = (0..c * a).map(|_| rng.random_range(0.05..1.5)).collect();
        let cov = CovarianceMatrix::new(Tensor::from_vec(&[c, a], cov_data.clone()).unwrap()).unwrap();
        let zero_cov = CovarianceMatrix::zeros(c, a);
        let plain = softmax_cross_entropy(&l.forward(&feats).unwrap(), &labels).unwrap().0;
        for s in [sa_loss(&feats, &labels, &l, &cov, 0.0).unwrap(), sa_loss(&feats, &labels, &l, &zero_cov, 2.0).unwrap()] {
            worst_eq = worst_eq.max((s.loss - plain).abs());
        }
        for lambda in [0.0, 0.5, 2.0] {
            let s = sa_loss(&feats, &labels, &l, &cov, lambda).unwrap();
            let value = |l: &Network, f: &Tensor, cov: &CovarianceMatrix| sa_loss(f, &labels, l, cov, lambda).unwrap().loss;
            let mut lp = l.clone();
            let params: Vec<f64> = s.grad_classifier.weights.iter().chain(&s.grad_classifier.biases).copied().collect();
            for (i, &g) in params.iter().enumerate() {
                let orig = *lp.param_mut(i);
                let num = central(
                    |v| {
                        *lp.param_mut(i) = v;
                        value(&lp, &feats, &cov)
                    },
                    orig,
                    h,
                );
                *lp.param_mut(i) = orig;
                worst_sa = worst_sa.max(rel_err(g, num));
            }
            let mut fp = feats.clone();
            for i in 0..b * a {
                let orig = fp.data()[i];
                let num = central(
                    |v| {
                        fp.data_mut()[i] = v;
                        value(&l, &fp, &cov)
                    },
                    orig,
                    h,
                );
                fp.data_mut()[i] = orig;
                worst_sa = worst_sa.max(rel_err(s.grad_features.data()[i], num));
            }
            for i in 0..c * a {
                let num = central(
                    |v| {
                        let mut d = cov_data.clone();
                        d[i] = v;
                        value(&l, &feats, &CovarianceMatrix::new(Tensor::from_vec(&[c, a], d).unwrap()).unwrap())
                    },
                    cov_data[i],
                    h,
                );
                worst_sa = worst_sa.max(rel_err(s.grad_cov.data()[i], num));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_ce < 1e-5 && worst_sa < 1e-5 && worst_eq <= 1e-12 && elapsed < Duration::from_secs(10);
    outcome(pass, format!("max rel err CE {worst_ce:.2e}, SA {worst_sa:.2e}; |SA(lambda=0) - CE| {worst_eq:.1e}; {elapsed:.2?}"))
}

fn quantizer_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(31);
    let (mut agree, mut total) = (0usize, 0usize);
    for k in [32, 64, 128] {
        let dim = 4;
        let cb = Codebook::random(k, dim, 1.0, &mut rng).unwrap();
        let feats = SemanticFeatures::new(gaussian_tensor(1000, 3 * dim, 1.2, &mut rng)).unwrap();
        let msgs = quantize(&feats, &cb, 0).unwrap();
        for (r, msg) in msgs.iter().enumerate() {
            for (blk, &idx) in msg.indices.iter().enumerate() {
                let x = &feats.vector(r)[blk * dim..(blk + 1) * dim];
                let dist = |j: usize| cb.entries()[j * dim..(j + 1) * dim].iter().zip(x).map(|(c, v)| (c - v) * (c - v)).sum::<f64>();
                let mut best = 0;
                for j in 1..k {
                    if dist(j) < dist(best) {
                        best = j;
                    }
                }
                agree += usize::from(best == idx as usize);
                total += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(agree == total && elapsed < Duration::from_secs(5), format!("{agree}/{total} indices agree, {elapsed:.2?}"))
}

/// Spearman rank correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &t in &idx[i..=j] {
                r[t] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

fn sweep_trend(dir: &Path, elapsed: Duration) -> Outcome {
    let r = read_sweep_csv(fs::File::open(dir.join("sweep.csv")).unwrap()).unwrap();
    let mut pass = elapsed < Duration::from_secs(600);
    let mut min_rho = f64::INFINITY;
    let mut gaps = 0;
    let mut seeds: Vec<u64> = r.rows.iter().map(|row| row.seed).collect();
    seeds.sort();
    seeds.dedup();
    for (ch, k) in r.series_keys() {
        let s = r.series(ch, k);
        let (p, a): (Vec<f64>, Vec<f64>) = s.iter().copied().unzip();
        pass &= p == [0.0, 4.0, 8.0, 12.0, 16.0];
        min_rho = min_rho.min(spearman(&p, &a));
        if ch == ChannelKind::LeoRician {
            let ray = r.series(ChannelKind::LeoRayleigh, k);
            gaps += s.iter().zip(&ray).filter(|(ri, ra)| ri.1 < ra.1).count();
            pass &= ray.len() == s.len();
        }
    }
    pass &= min_rho >= 0.9 && gaps == 0 && seeds.len() == 5 && r.series_keys().len() == 6;
    outcome(pass, format!("{} series, {} seeds, min Spearman {min_rho:.3}, Rician < Rayleigh at {gaps} points, {elapsed:.2?}", r.series_keys().len(), seeds.len()))
}

fn logs(dir: &Path, method: &str, seed: u64) -> Vec<RoundLog> {
    read_round_log_csv(fs::File::open(dir.join(format!("{method}_seed{seed}.csv"))).unwrap()).unwrap()
}

fn ut_curve(logs: &[RoundLog]) -> Vec<f64> {
    logs.iter().filter(|l| l.side == Side::Ut).map(|l| l.top1).collect()
}

fn mean_curve(dir: &Path, method: &str) -> Vec<f64> {
    let curves: Vec<Vec<f64>> = (0..5).map(|s| ut_curve(&logs(dir, method, s))).collect();
    (0..curves[0].len()).map(|r| curves.iter().map(|c| c[r]).sum::<f64>() / curves.len() as f64).collect()
}

fn first_reaching(curve: &[f64], target: f64) -> Option<usize> {
    curve.iter().position(|&a| a >= target).map(|r| r + 1)
}

fn csa_gain(dir: &Path, elapsed: Duration) -> Outcome {
    let (csa, non) = (mean_curve(dir, "csa"), mean_curve(dir, "noncsa"));
    let (a, b) = (*csa.last().unwrap(), *non.last().unwrap());
    let gap = 100.0 * (a - b);
    let sc = CsaScenario::default();
    let pass = gap >= 2.0 && sc.eval_psnr_db == 12.0 && sc.dtjscc.train_psnr_db == 4.0 && elapsed < Duration::from_secs(900);
    outcome(pass, format!("final UT top1 over 5 seeds: CSA {a:.4}, non-CSA {b:.4}, gap {gap:.1} pp, {elapsed:.2?}"))
}

fn fewer_rounds(dir: &Path, fed_dir: &Path, elapsed: Duration) -> Outcome {
    let target = CsaScenario::default().target_accuracy;
    let (csa, fed) = (mean_curve(dir, "csa"), mean_curve(fed_dir, "fedavg"));
    let (rc, rf) = (first_reaching(&csa, target), first_reaching(&fed, target));
    let pass = match (rc, rf) {
        (Some(c), Some(f)) => c < f,
        (Some(_), None) => true,
        _ => false,
    } && elapsed < Duration::from_secs(900);
    let show = |r: Option<usize>| r.map_or("not reached".to_string(), |r| format!("round {r}"));
    let per_seed: Vec<String> = (0..5)
        .map(|s| {
            let c = first_reaching(&ut_curve(&logs(dir, "csa", s)), target);
            let f = first_reaching(&ut_curve(&logs(fed_dir, "fedavg", s)), target);
            format!("{s}:{}/{}", c.map_or("-".into(), |v| v.to_string()), f.map_or("-".into(), |v| v.to_string()))
        })
        .collect();
    outcome(
        pass,
        format!(
            "target {target} on the 5-seed mean UT curve: CSA {}, FedAvg {}; per seed csa/fedavg {}; {elapsed:.2?}",
            show(rc),
            show(rf),
            per_seed.join(" ")
        ),
    )
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    let (x, y) = (csvs(a), csvs(b));
    let same = !x.is_empty() && x == y;
    outcome(same, format!("{} CSVs compared between --workers 1 and 8", x.len()))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let timed = |args: &[&str]| {
        let start = Instant::now();
        semcom(args, root);
        start.elapsed()
    };
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("1 link budget", link_budget(root));
    report("2 channel statistics", channel_statistics());
    report("3 modem fidelity", modem_fidelity());
    report("4 gradient integrity", gradient_integrity());
    report("5 quantizer oracle", quantizer_oracle());

    let sweep_time = timed(&["sweep", "--out", "w1", "--workers", "1"]);
    timed(&["sweep", "--out", "w8", "--workers", "8"]);
    report("6 accuracy trend", sweep_trend(&root.join("w1"), sweep_time));

    let csa_time = timed(&["csa", "--out", "w1", "--workers", "1"]);
    timed(&["csa", "--out", "w8", "--workers", "8"]);
    let fed_time = timed(&["fedavg", "--out", "fed", "--workers", "1"]);
    report("7 csa gain", csa_gain(&root.join("w1"), csa_time));
    report("8 fewer rounds", fewer_rounds(&root.join("w1"), &root.join("fed"), csa_time + fed_time));
    report("9 determinism", determinism(&root.join("w1"), &root.join("w8")));

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
