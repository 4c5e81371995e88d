//! Acceptance suite. Runs as a plain binary (`harness = false`) and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! `cargo test -p modgap --test acceptance -- 3 7` runs a subset by number.

use std::time::Instant;

use modgap::diagnostics::{js_masses, knn_mixing_rate, knn_overlap, phantom_drift, sample_complexity_curve, CurveData};
use modgap::frame::build_frame;
use modgap::io::EmbeddingSet;
use modgap::linalg::{dot, norm, Matrix};
use modgap::moments::{stats_of, MomentAccumulator};
use modgap::oracle::{estimate_coupling, gap_necessity_ablation, grad_anchor, grad_candidate, run_toy_training, ContrastiveBatch, SimConfig};
use modgap::realign::{blockwise_stages, estimate_blockwise, estimate_realign, realign_stages, DEFAULT_BLOCK_FLOOR, DEFAULT_EPS};
use modgap::spectral::{effective_rank, power_law_alpha, sin_largest_angle, sym_eig, tyler_shape, TylerOptions};
use modgap::synth::{acg_samples, gaussian_matrix, geometric_spectrum, power_law_spectrum, random_orthonormal, GaussianModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(20_240_917);
    r.set_stream(stream);
    r
}

// ---- test-side oracles -------------------------------------------------

fn mean_of<'a>(rows: impl Iterator<Item = &'a [f64]>, d: usize) -> Vec<f64> {
    let mut s = vec![0.0; d];
    let mut n = 0usize;
    for r in rows {
        for (a, b) in s.iter_mut().zip(r) {
            *a += b;
        }
        n += 1;
    }
    s.iter().map(|v| v / n as f64).collect()
}

/// Two-pass population covariance of the rows.
fn cov_of(m: &Matrix<f64>) -> Matrix<f64> {
    let d = m.ncols();
    let mu = mean_of(m.row_iter(), d);
    let mut c = Matrix::zeros(d, d);
    for r in m.row_iter() {
        let z: Vec<f64> = r.iter().zip(&mu).map(|(a, b)| a - b).collect();
        for i in 0..d {
            for j in i..d {
                c[(i, j)] += z[i] * z[j];
            }
        }
    }
    let n = m.nrows() as f64;
    for i in 0..d {
        for j in i..d {
            let v = c[(i, j)] / n;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

fn rel_frob(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.sub(b).frobenius_norm() / b.frobenius_norm()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Modified Gram–Schmidt; drops numerically dependent vectors.
fn orth_basis(vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let mut w = v.clone();
        for q in &out {
            let c = dot(&w, q);
            w.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
        let n = norm(&w);
        if n > 1e-10 * norm(v) {
            out.push(w.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

fn residual_after_projection(g: &[f64], basis: &[Vec<f64>]) -> f64 {
    let mut r = g.to_vec();
    for q in basis {
        let c = dot(&r, q);
        r.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
    }
    norm(&r)
}

fn mat_from(rows: usize, cols: usize, f: impl FnMut() -> f64) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, std::iter::repeat_with(f).take(rows * cols).collect())
}

// ---- criteria ----------------------------------------------------------

fn anisotropic_pair(d: usize, n: usize, r: &mut ChaCha8Rng) -> modgap::error::Result<(EmbeddingSet<f64>, EmbeddingSet<f64>)> {
    let mut mean_y = vec![0.0; d];
    mean_y[0] = 0.8;
    let mut mean_x = vec![0.0; d];
    mean_x[1] = -0.6;
    mean_x[2] = 0.3;
    let eig_y: Vec<f64> = geometric_spectrum(d, 100.0).iter().map(|l| 0.05 * l).collect();
    let eig_x: Vec<f64> = geometric_spectrum(d, 10.0).iter().map(|l| 0.02 * l).collect();
    let y = GaussianModel::random(mean_y, &eig_y, r).sample_set(n, true, "y", r)?;
    let x = GaussianModel::random(mean_x, &eig_x, r).sample_set(n, true, "x", r)?;
    Ok((y, x))
}

fn c1_realign_moments() -> Outcome {
    let start = Instant::now();
    let (d, n) = (64, 100_000);
    let mut r = rng(1);
    let (y, x) = anisotropic_pair(d, n, &mut r)?;
    let stats = estimate_realign(&stats_of(&y, false)?, &stats_of(&x, false)?, &y, DEFAULT_EPS)?;

    let mu_x = mean_of(x.row_iter(), d);
    let mu_y = mean_of(y.row_iter(), d);
    let t_y = y.row_iter().map(|r| dist(r, &mu_y).powi(2)).sum::<f64>() / n as f64;
    let t_x = x.row_iter().map(|r| dist(r, &mu_x).powi(2)).sum::<f64>() / n as f64;

    let mut affine = Vec::with_capacity(n * d);
    let mut pre = Vec::with_capacity(n * d);
    for row in y.row_iter() {
        let st = realign_stages(row, &stats)?;
        affine.extend(st.affine);
        pre.extend(st.recentered);
    }
    let affine = Matrix::from_vec(n, d, affine);
    let pre = Matrix::from_vec(n, d, pre);
    let mu_aff = mean_of(affine.row_iter(), d);
    let tr_aff = affine.row_iter().map(|r| dist(r, &mu_aff).powi(2)).sum::<f64>() / n as f64;
    let expected_tr = t_x * t_y / (t_y + DEFAULT_EPS);
    let mean_err = dist(&mu_aff, &mu_x);
    let tr_err = (tr_aff - expected_tr).abs() / expected_tr;
    let pre_err = dist(&mean_of(pre.row_iter(), d), &mu_x);
    let secs = start.elapsed().as_secs_f64();
    Ok((
        mean_err <= 1e-10 && tr_err <= 1e-10 && pre_err <= 1e-12 && secs < 10.0,
        format!("affine mean err {mean_err:.2e}, trace rel err {tr_err:.2e}, step-3 mean err {pre_err:.2e}, {secs:.1}s"),
    ))
}

fn c2_shape_preservation() -> Outcome {
    let (d, n) = (64, 100_000);
    let mut r = rng(2);
    let (y, x) = anisotropic_pair(d, n, &mut r)?;
    let stats = estimate_realign(&stats_of(&y, false)?, &stats_of(&x, false)?, &y, DEFAULT_EPS)?;
    let mut affine = Vec::with_capacity(n * d);
    for row in y.row_iter() {
        affine.extend(realign_stages(row, &stats)?.affine);
    }
    let c_aff = cov_of(&Matrix::from_vec(n, d, affine));
    let c_y = cov_of(&y.to_matrix());
    let scaled = c_y.scale(stats.s * stats.s);
    let cov_err = rel_frob(&c_aff, &scaled);

    let ea = sym_eig(&c_aff)?;
    let ey = sym_eig(&c_y)?;
    let mut worst_angle = 0.0f64;
    for j in 0..d {
        let (qa, qy) = (ea.eigenvectors.column(j), ey.eigenvectors.column(j));
        let c = dot(&qa, &qy);
        let perp: Vec<f64> = qa.iter().zip(&qy).map(|(a, b)| a - c * b).collect();
        worst_angle = worst_angle.max(norm(&perp).atan2(c.abs()));
    }
    let kappa = |l: &[f64]| l.iter().cloned().fold(f64::MIN, f64::max) / l.iter().cloned().fold(f64::MAX, f64::min);
    let k_a = kappa(&ea.eigenvalues);
    let k_y = kappa(&ey.eigenvalues);
    let k_err = (k_a - k_y).abs() / k_y;
    Ok((
        cov_err < 1e-10 && worst_angle < 1e-8 && k_err < 1e-10,
        format!("cov rel err {cov_err:.2e}, max eigenvector angle {worst_angle:.2e}, kappa {k_y:.2} rel change {k_err:.2e}"),
    ))
}

/// Loss written from scratch: `log Σ_j exp(⟨x_i,y_j⟩/τ) − ⟨x_i,y_i⟩/τ`.
fn ref_loss(x: &Matrix<f64>, y: &Matrix<f64>, i: usize, tau: f64) -> f64 {
    let logits: Vec<f64> = (0..y.nrows()).map(|j| dot(x.row(i), y.row(j)) / tau).collect();
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() - logits[i]
}

fn c3_gradient_oracle() -> Outcome {
    let start = Instant::now();
    let (b, d, h) = (8, 16, 1e-5);
    let taus = [0.05, 0.5, 1.0];
    let mut r = rng(3);
    let (mut fd_worst, mut span_worst, mut col_worst) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..100 {
        let tau = taus[t % 3];
        let x = modgap::synth::normalize_rows(gaussian_matrix(b, d, &mut r));
        let y = modgap::synth::normalize_rows(gaussian_matrix(b, d, &mut r));
        let batch = ContrastiveBatch::new(x.clone(), y.clone(), tau)?;
        let y_basis = orth_basis(&(0..b).map(|j| y.row(j).to_vec()).collect::<Vec<_>>());
        for i in 0..b {
            let ga = grad_anchor(&batch, i)?;
            let mut fd = vec![0.0; d];
            for k in 0..d {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[(i, k)] += h;
                xm[(i, k)] -= h;
                fd[k] = (ref_loss(&xp, &y, i, tau) - ref_loss(&xm, &y, i, tau)) / (2.0 * h);
            }
            fd_worst = fd_worst.max(dist(&ga, &fd) / norm(&fd));
            span_worst = span_worst.max(residual_after_projection(&ga, &y_basis) / norm(&ga));

            // stacked ∂L_i/∂Y over all candidates
            let (mut an, mut num, mut den) = (Vec::new(), 0.0, 0.0);
            for j in 0..b {
                let gc = grad_candidate(&batch, i, j)?;
                let xi = x.row(i);
                let c = dot(&gc, xi) / dot(xi, xi);
                let perp: Vec<f64> = gc.iter().zip(xi).map(|(g, v)| g - c * v).collect();
                if norm(&gc) > 0.0 {
                    col_worst = col_worst.max(norm(&perp) / norm(&gc));
                }
                for k in 0..d {
                    let (mut yp, mut ym) = (y.clone(), y.clone());
                    yp[(j, k)] += h;
                    ym[(j, k)] -= h;
                    let f = (ref_loss(&x, &yp, i, tau) - ref_loss(&x, &ym, i, tau)) / (2.0 * h);
                    num += (gc[k] - f) * (gc[k] - f);
                    den += f * f;
                }
                an.push(gc);
            }
            fd_worst = fd_worst.max((num / den).sqrt());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        fd_worst < 1e-6 && span_worst < 1e-10 && col_worst <= 1e-12 && secs < 5.0,
        format!("fd rel err {fd_worst:.2e}, span residual {span_worst:.2e}, collinearity {col_worst:.2e}, {secs:.2}s"),
    ))
}

fn c4_leakage_bound() -> Outcome {
    let mut r = rng(4);
    let (mut violations, mut worst) = (0usize, f64::NEG_INFINITY);
    for _ in 0..10_000 {
        let d = r.random_range(2..=64usize);
        let k = r.random_range(1..d);
        let u = random_orthonormal(d, k, &mut r);
        let tilt = 10f64.powf(r.random_range(-6.0..0.5));
        let ut = match u.add(&gaussian_matrix(d, k, &mut r).scale(tilt)).orthonormalize_columns() {
            Ok(q) => q,
            Err(_) => continue,
        };
        let c: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut r)).collect();
        let g = ut.matvec(&c);
        let pv: Vec<f64> = {
            let inside = u.matvec(&u.t_matvec(&g));
            g.iter().zip(&inside).map(|(a, b)| a - b).collect()
        };
        let ratio = norm(&pv) / norm(&g);
        let sin = sin_largest_angle(&u, &ut)?;
        worst = worst.max(ratio - sin);
        if ratio > sin + 1e-12 {
            violations += 1;
        }
    }
    Ok((violations == 0, format!("10000 triples, {violations} violations, max excess {worst:.2e}")))
}

fn c5_tyler() -> Outcome {
    let start = Instant::now();
    let (d, n) = (8, 20_000);
    let mut r = rng(5);
    let eig = geometric_spectrum(d, 100.0);
    let q = random_orthonormal(d, d, &mut r);
    let samples = acg_samples(n, &eig, &q, &mut r);
    let total: f64 = eig.iter().sum();
    let mut planted = Matrix::zeros(d, d);
    for (j, &l) in eig.iter().enumerate() {
        let c = q.column(j);
        for a in 0..d {
            for b in 0..d {
                planted[(a, b)] += l * d as f64 / total * c[a] * c[b];
            }
        }
    }
    let est = tyler_shape(&samples, TylerOptions::default())?;
    let err = rel_frob(&est.sigma_hat, &planted);
    let tr_err = (est.sigma_hat.trace() - d as f64).abs();
    // radial rescaling: dyadic factors must give identical bits, others round-off only
    let raw = GaussianModel::new(vec![0.0; d], &eig, &q).sample(n, &mut r);
    let base = tyler_shape(&raw, TylerOptions::default())?.sigma_hat;
    let mut exact = true;
    for f in [0.25, 2.0, 1024.0] {
        exact &= tyler_shape(&raw.scale(f), TylerOptions::default())?.sigma_hat == base;
    }
    let mut radial = raw.clone();
    for i in 0..n {
        let s = 10f64.powf(r.random_range(-3.0..3.0));
        radial.row_mut(i).iter_mut().for_each(|v| *v *= s);
    }
    let radial_diff = tyler_shape(&radial, TylerOptions::default())?.sigma_hat.sub(&base).max_abs();
    let secs = start.elapsed().as_secs_f64();
    Ok((
        est.converged && err < 0.05 && tr_err < 1e-10 && exact && radial_diff < 1e-12 && secs < 30.0,
        format!(
            "shape rel err {err:.4}, |tr - d| {tr_err:.1e}, dyadic scaling bit-exact {exact}, per-row rescaling diff {radial_diff:.1e}, {} iters, {secs:.1}s",
            est.iterations
        ),
    ))
}

fn c6_coupling() -> Outcome {
    let (n, r_dim, v_dim) = (10_000, 4, 12);
    let mut r = rng(6);
    let su: Vec<f64> = (0..r_dim).map(|i| 1.0 / (1.0 + i as f64)).collect();
    let delta = mat_from(n, r_dim, || StandardNormal.sample(&mut r));
    let mut delta = delta;
    for i in 0..n {
        for (v, s) in delta.row_mut(i).iter_mut().zip(&su) {
            *v *= s.sqrt();
        }
    }
    let l = gaussian_matrix(v_dim, r_dim, &mut r);
    let signal = delta.matmul(&l.transpose());
    // SNR = E‖Lδ‖² / E‖η‖² = 10
    let signal_power: f64 = (0..r_dim).map(|k| su[k] * (0..v_dim).map(|a| l[(a, k)].powi(2)).sum::<f64>()).sum();
    let sigma2 = signal_power / 10.0 / v_dim as f64;
    let noise = mat_from(n, v_dim, || sigma2.sqrt() * { let g: f64 = StandardNormal.sample(&mut r); g });
    let zeta = signal.add(&noise);

    let est = estimate_coupling(&delta, &zeta, 0.0)?;
    let l_err = rel_frob(&est.l_hat, &l);

    // identities against the planted L and noise level
    let inv = 1.0 / n as f64;
    let sigma_u_hat = delta.t_matmul(&delta).scale(inv);
    let cross = zeta.t_matmul(&delta).scale(inv);
    let cross_err = rel_frob(&cross, &l.matmul(&sigma_u_hat));
    let cov_z = zeta.t_matmul(&zeta).scale(inv);
    let mut pred = l.matmul(&sigma_u_hat).matmul(&l.transpose());
    pred.add_diag(sigma2);
    let cov_err = rel_frob(&cov_z, &pred);

    let indep = mat_from(n, v_dim, || StandardNormal.sample(&mut r));
    let r2 = estimate_coupling(&delta, &indep, 0.0)?.r_squared;
    Ok((
        l_err < 0.10 && cross_err < 0.02 && cov_err < 0.02 && r2 < 0.02,
        format!("L rel err {l_err:.4}, cross-moment err {cross_err:.4}, covariance err {cov_err:.4}, independent R² {r2:.5}"),
    ))
}

fn c7_spectrum_metrics() -> Outcome {
    let mut worst = 0.0f64;
    for alpha in [1.0, 1.33, 2.0] {
        let spec: Vec<f64> = power_law_spectrum(256, alpha).iter().map(|l| 3.7 * l).collect();
        for (lo, hi) in [(1, 256), (5, 100)] {
            worst = worst.max((power_law_alpha(&spec, lo, hi)? - alpha).abs());
        }
    }
    let er: f64 = effective_rank(&[1.0; 32])?;
    let p = [0.1, 0.2, 0.3, 0.4, 0.0, 0.0];
    let q = [0.0, 0.0, 0.0, 0.0, 0.5, 0.5];
    let js_same = js_masses(&p, &p)?;
    let js_disjoint = js_masses(&p, &q)?;
    let ok = worst < 1e-3 && (er - 32.0).abs() < 1e-6 && js_same.abs() < 1e-12 && (js_disjoint - 2f64.ln()).abs() < 1e-12;
    Ok((
        ok,
        format!("alpha err {worst:.1e}, erank(I32) {er:.9}, JS(P,P) {js_same:.1e}, JS disjoint - ln2 {:.1e}", js_disjoint - 2f64.ln()),
    ))
}

fn c8_knn() -> Outcome {
    let (n, d, k) = (2000, 16, 20);
    let mut r = rng(8);
    let g = |r: &mut ChaCha8Rng, shift: f64| {
        let mut m = gaussian_matrix(n, d, r);
        for i in 0..n {
            m[(i, 0)] += shift;
        }
        EmbeddingSet::from_matrix(m, "g")
    };
    let a = g(&mut r, 0.0)?;
    let b = g(&mut r, 0.0)?;
    let mixed = knn_mixing_rate(&a, &b, k)?;
    let far = g(&mut r, 10.0)?;
    let separated = knn_mixing_rate(&a, &far, k)?;

    let (m, kk) = (500, 10);
    let base = gaussian_matrix(m, 8, &mut r);
    let set = EmbeddingSet::from_matrix(base.clone(), "p")?;
    let identity = knn_overlap(&set, &set, kk)?.overlap;
    let rot = random_orthonormal(8, 8, &mut r);
    let mut moved = base.matmul(&rot).scale(2.5);
    for i in 0..m {
        moved.row_mut(i).iter_mut().enumerate().for_each(|(j, v)| *v += 0.5 + j as f64);
    }
    let rigid = knn_overlap(&set, &EmbeddingSet::from_matrix(moved, "p")?, kk)?.overlap;
    let mut random_sum = 0.0;
    for _ in 0..5 {
        let other = EmbeddingSet::from_matrix(gaussian_matrix(m, 8, &mut r), "q")?;
        random_sum += knn_overlap(&set, &other, kk)?.overlap;
    }
    let random = random_sum / 5.0;
    let chance = kk as f64 / (m - 1) as f64;
    let ok = (0.45..=0.55).contains(&mixed)
        && separated < 0.01
        && identity == 1.0
        && rigid == 1.0
        && random >= 0.5 * chance
        && random <= 2.0 * chance;
    Ok((
        ok,
        format!(
            "mixing same {:.2}%, separated {:.3}%, overlap identity {identity}, rigid {rigid}, random {random:.4} (chance {chance:.4})",
            100.0 * mixed,
            100.0 * separated
        ),
    ))
}

/// Test-side Monte Carlo of the mean spherical projection and its angle to m.
fn drift_angle(m: &[f64], zeta: &Matrix<f64>) -> f64 {
    let d = m.len();
    let mut s = vec![0.0; d];
    for z in zeta.row_iter() {
        let u: Vec<f64> = m.iter().zip(z).map(|(a, b)| a + b).collect();
        let nu = norm(&u);
        s.iter_mut().zip(&u).for_each(|(a, b)| *a += b / nu);
    }
    let c = dot(&s, m) / (norm(&s) * norm(m));
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

fn c9_phantom_drift() -> Outcome {
    let (n, d) = (100_000, 8);
    let mut r = rng(9);
    let mut m = vec![0.0; d];
    m[0] = 2f64.sqrt();
    m[1] = 2f64.sqrt();
    let mut aniso = gaussian_matrix(n, d, &mut r);
    for i in 0..n {
        aniso[(i, 0)] *= 10.0;
    }
    let iso = gaussian_matrix(n, d, &mut r);
    let a = phantom_drift(&m, &aniso)?;
    let c = phantom_drift(&m, &iso)?;
    let agree = (a.drift_angle_deg - drift_angle(&m, &aniso)).abs().max((c.drift_angle_deg - drift_angle(&m, &iso)).abs());
    let excess = a.drift_angle_deg - c.drift_angle_deg;

    let mut tiny = vec![0.0; d];
    tiny[0] = 1e-150;
    let centered = norm(&phantom_drift(&tiny, &aniso)?.mean_projection);
    let limit = 3.0 / (n as f64).sqrt();
    Ok((
        excess >= 5.0 && agree < 1e-9 && centered < limit,
        format!(
            "angle {:.2}° vs isotropic {:.3}° (excess {excess:.2}°, oracle agreement {agree:.1e}), ‖E[π(ζ)]‖ {centered:.2e} < {limit:.2e}",
            a.drift_angle_deg, c.drift_angle_deg
        ),
    ))
}

/// Neumaier summation, independent of the crate's helper.
#[derive(Default, Clone, Copy)]
struct Kahan {
    s: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        self.c += if self.s.abs() >= x.abs() { (self.s - t) + x } else { (x - t) + self.s };
        self.s = t;
    }
}

fn c10_streaming() -> Outcome {
    let start = Instant::now();
    let d = 64;
    let block_rows = 10_000;
    let mut r = rng(10);
    let mut block = Vec::with_capacity(block_rows * d);
    for _ in 0..block_rows {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        v[0] += 3.0;
        let nv = norm(&v);
        block.extend(v.iter().map(|x| (x / nv) as f32));
    }
    let block = EmbeddingSet::new(block_rows, d, block, "bench")?;
    let time_run = |n: usize| -> modgap::error::Result<(f64, usize)> {
        let mut acc = MomentAccumulator::<f64>::new(d, true);
        let t = Instant::now();
        for _ in 0..n / block_rows {
            acc.accumulate(&block)?;
        }
        let secs = t.elapsed().as_secs_f64();
        std::hint::black_box(acc.sum());
        Ok((secs * 1e9 / n as f64, acc.state_bytes()))
    };
    time_run(block_rows * 20)?;
    // interleave repetitions so slow drift in machine load hits every size alike
    let sizes = [100_000usize, 500_000, 1_000_000];
    let mut reps = vec![Vec::new(); sizes.len()];
    let mut bytes = Vec::new();
    for _ in 0..3 {
        for (k, &n) in sizes.iter().enumerate() {
            let (rate, b) = time_run(n)?;
            reps[k].push(rate);
            bytes.push(b);
        }
    }
    let rates: Vec<f64> = reps
        .iter_mut()
        .map(|v| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[1]
        })
        .collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let dev = rates.iter().map(|x| (x / mean - 1.0).abs()).fold(0.0, f64::max);
    let same_bytes = bytes.windows(2).all(|w| w[0] == w[1]);

    // precision replay at N = 5e5 on f32 rows with a large common offset
    let n = 500_000usize;
    let mut acc64 = MomentAccumulator::<f64>::new(d, false);
    let mut acc32 = MomentAccumulator::<f32>::new(d, false);
    let mut oracle = vec![Kahan::default(); d];
    for i in 0..n {
        let row = block.row(i % block_rows);
        acc64.push(row)?;
        acc32.push(row)?;
        for (o, &v) in oracle.iter_mut().zip(row) {
            o.add(v as f64);
        }
    }
    let m64 = acc64.finalize()?.mean;
    let m32 = acc32.finalize()?.mean;
    let (mut e64, mut e32) = (0.0f64, 0.0f64);
    for j in 0..d {
        let truth = (oracle[j].s + oracle[j].c) / n as f64;
        e64 = e64.max((m64[j] - truth).abs());
        e32 = e32.max((m32[j] as f64 - truth).abs());
    }
    let ratio_ok = if e64 == 0.0 { e32 > 0.0 } else { e32 / e64 >= 1e3 };
    let secs = start.elapsed().as_secs_f64();
    Ok((
        dev <= 0.25 && same_bytes && ratio_ok && secs < 120.0,
        format!(
            "ns/row {:.0}/{:.0}/{:.0} (max dev {:.1}%), state {} B constant {same_bytes}, f32 err {e32:.2e} vs f64 {e64:.2e}, {secs:.1}s",
            rates[0],
            rates[1],
            rates[2],
            100.0 * dev,
            bytes[0]
        ),
    ))
}

fn c11_sample_curve() -> Outcome {
    let (d, pool, held) = (32, 100_000, 10_000);
    let mut r = rng(11);
    let mut mean_y = vec![0.0; d];
    mean_y[0] = 0.7;
    let mut mean_x = vec![0.0; d];
    mean_x[1] = 0.5;
    let src = GaussianModel::random(mean_y, &geometric_spectrum(d, 100.0).iter().map(|l| 0.1 * l).collect::<Vec<_>>(), &mut r);
    let tgt = GaussianModel::random(mean_x, &geometric_spectrum(d, 10.0).iter().map(|l| 0.05 * l).collect::<Vec<_>>(), &mut r);
    let calib_src = src.sample_set(pool, true, "src", &mut r)?;
    let calib_tgt = tgt.sample_set(pool, true, "tgt", &mut r)?;
    let heldout_src = src.sample_set(held, true, "src", &mut r)?;
    let heldout_tgt = tgt.sample_set(held, true, "tgt", &mut r)?;
    let data = CurveData {
        calib_src: &calib_src,
        calib_tgt: &calib_tgt,
        heldout_src: &heldout_src,
        heldout_tgt: &heldout_tgt,
    };
    let curve = sample_complexity_curve(&data, &[1_000, 10_000, 100_000], 20, DEFAULT_EPS, 11)?;
    let (g3, g4, g5) = (curve[0].mean_gap, curve[1].mean_gap, curve[2].mean_gap);
    let plateau = g4 / g5;
    let decay = curve[0].std_gap / curve[1].std_gap;
    let clt = 10f64.sqrt();
    Ok((
        plateau <= 2.0 && decay >= clt / 2.0 && decay <= clt * 2.0,
        format!(
            "gap 1e3 {g3:.4}, 1e4 {g4:.4}, 1e5 {g5:.4} (ratio {plateau:.2}); std ratio 1e3/1e4 {decay:.2} vs √10 {clt:.2}"
        ),
    ))
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R, Box<dyn std::error::Error>> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(1).build()?.install(f))
}

fn c12_toy_training() -> Outcome {
    let start = Instant::now();
    let trace = single_threaded(|| run_toy_training(&SimConfig::default()))??;
    let secs = start.elapsed().as_secs_f64();
    let rows = &trace.rows;
    let last_quarter = &rows[rows.len() - rows.len() / 4..];
    let rho_min = last_quarter
        .iter()
        .map(|r| if r.rho_degenerate { f64::NEG_INFINITY } else { r.rho_align })
        .fold(f64::INFINITY, f64::min);
    let held = rows.iter().filter(|r| r.leak_ref <= r.sin_theta + r.coupling_norm + 1e-6).count();
    let frac = held as f64 / rows.len() as f64;
    let mut cos: Vec<f64> = rows.iter().filter(|r| r.step > trace.t0).map(|r| r.cosine_stability).collect();
    cos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if cos.is_empty() { f64::NAN } else { cos[cos.len() / 2] };
    let end = rows.last().ok_or("empty trace")?;
    let ok = rho_min > 0.9 && frac >= 0.99 && median > 0.95 && end.kappa_u > end.kappa_v && end.kappa_v > 1.0 && secs < 300.0;
    Ok((
        ok,
        format!(
            "rho min over last quartile {rho_min:.3}, leak bound {held}/{} ({:.1}%), cosine median {median:.4}, kappa U {:.2} > V {:.2}, {secs:.0}s",
            rows.len(),
            100.0 * frac,
            end.kappa_u,
            end.kappa_v
        ),
    ))
}

fn c13_ablation() -> Outcome {
    let start = Instant::now();
    let rep = gap_necessity_ablation(&SimConfig::default(), &[0, 1, 2, 3, 4])?;
    let ratio = rep.shared_encoder_ratio();
    Ok((
        ratio >= 10.0,
        format!(
            "baseline ‖γ‖ {:.4}, shared encoder {:.4}, ratio {ratio:.1}, {:.0}s",
            rep.baseline.mean_gamma_norm,
            rep.shared_encoder.mean_gamma_norm,
            start.elapsed().as_secs_f64()
        ),
    ))
}

fn block_cov(m: &Matrix<f64>, basis: &Matrix<f64>) -> Matrix<f64> {
    cov_of(&m.matmul(basis))
}

fn c14_blockwise() -> Outcome {
    let (d, n) = (16, 100_000);
    let mut r = rng(14);
    let mut mean_y = vec![0.0; d];
    mean_y[0] = 0.6;
    let mut mean_x = vec![0.0; d];
    mean_x[1] = 0.6;
    let src = GaussianModel::random(mean_y, &geometric_spectrum(d, 30.0).iter().map(|l| 0.1 * l).collect::<Vec<_>>(), &mut r)
        .sample_set(n, true, "src", &mut r)?;
    let tgt = GaussianModel::random(mean_x, &power_law_spectrum(d, 1.0).iter().map(|l| 0.05 * l).collect::<Vec<_>>(), &mut r)
        .sample_set(n, true, "tgt", &mut r)?;
    let frame = build_frame(&cov_of(&tgt.to_matrix()), &cov_of(&src.to_matrix()), 0.9)?;
    let stats = estimate_blockwise(&frame, &src, &tgt, DEFAULT_BLOCK_FLOOR)?;
    let mut transformed = Vec::with_capacity(n * d);
    for row in src.row_iter() {
        transformed.extend(blockwise_stages(row, &stats)?.transformed);
    }
    let transformed = Matrix::from_vec(n, d, transformed);
    let tgt_m = tgt.to_matrix();
    let err_u = rel_frob(&block_cov(&transformed, &frame.basis_u), &block_cov(&tgt_m, &frame.basis_u));
    let err_v = rel_frob(&block_cov(&transformed, &frame.basis_v), &block_cov(&tgt_m, &frame.basis_v));

    // ill-conditioned source, κ = 1e3; the floor sits above 1/κ so it engages
    let m = 20_000;
    let kappa = 1e3;
    let mut bad_mean = vec![0.0; d];
    bad_mean[2] = 1.0;
    let bad_eig: Vec<f64> = geometric_spectrum(d, kappa).iter().map(|l| 0.01 * l).collect();
    let bad_set = GaussianModel::random(bad_mean, &bad_eig, &mut r).sample_set(m, true, "src", &mut r)?;
    let tgt_small = tgt.slice_rows(0, m);
    let bad_frame = build_frame(&cov_of(&tgt_small.to_matrix()), &cov_of(&bad_set.to_matrix()), 0.9)?;
    let mut finite = true;
    let mut floored = Vec::new();
    for floor in [DEFAULT_BLOCK_FLOOR, 10.0 / kappa] {
        let bad_stats = estimate_blockwise(&bad_frame, &bad_set, &tgt_small, floor)?;
        for row in bad_set.row_iter() {
            finite &= blockwise_stages(row, &bad_stats)?.output.iter().all(|v| v.is_finite());
        }
        floored.push((floor, bad_stats.floored_u + bad_stats.floored_v, bad_stats.floor_triggered()));
    }
    let flagged = floored[1].2 && floored[1].1 > 0;
    Ok((
        err_u < 0.03 && err_v < 0.03 && finite && flagged,
        format!(
            "rank {} block cov err U {err_u:.2e} V {err_v:.2e}; kappa 1e3 source: floor {:.0e} raised {}, floor {:.0e} raised {} (flagged {}), outputs finite {finite}",
            frame.rank(),
            floored[0].0,
            floored[0].1,
            floored[1].0,
            floored[1].1,
            floored[1].2
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 14] = [
        ("realign moment correctness", c1_realign_moments),
        ("shape preservation", c2_shape_preservation),
        ("gradient oracle", c3_gradient_oracle),
        ("leakage bound", c4_leakage_bound),
        ("tyler shape estimator", c5_tyler),
        ("coupling recovery", c6_coupling),
        ("spectrum metrics", c7_spectrum_metrics),
        ("knn diagnostics", c8_knn),
        ("phantom drift", c9_phantom_drift),
        ("streaming contracts", c10_streaming),
        ("sample-complexity curve", c11_sample_curve),
        ("toy training", c12_toy_training),
        ("gap-necessity ablation", c13_ablation),
        ("blockwise operator", c14_blockwise),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let (ok, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!("{} [{id:2}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
