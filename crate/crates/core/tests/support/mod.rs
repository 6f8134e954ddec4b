//! Reference implementations for the integration tests.
//!
//! Each oracle is written from the definition with plain loops and full
//! sorts. None of them calls into the library's algorithms.

#![allow(dead_code)]

use rand::Rng;

/// Frames as `T` rows of `D` values.
pub type Frames = Vec<Vec<f64>>;

pub fn random_frames<R: Rng>(rng: &mut R, t: usize, d: usize) -> Frames {
    (0..t)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn to_array(frames: &Frames) -> ndarray::Array2<f64> {
    let (t, d) = (frames.len(), frames[0].len());
    ndarray::Array2::from_shape_fn((t, d), |(i, j)| frames[i][j])
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

fn l2(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x * x;
    }
    s.sqrt()
}

// ---- physics ----

pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let mut w = Vec::with_capacity(len);
    for n in 0..len {
        let s = (std::f64::consts::PI * n as f64 / (len - 1) as f64).sin();
        w.push(s * s);
    }
    w
}

/// `|X_k|²` for `k = 0..n` by the textbook O(n²) sum.
pub fn dft_power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// Bins in `1..=T/2` whose windowed power is within rounding of the
/// maximum. A singleton means the argmax is unambiguous.
pub fn dominant_bin_candidates(column: &[f64]) -> Vec<usize> {
    let w = hann(column.len());
    let windowed: Vec<f64> = column.iter().zip(&w).map(|(x, w)| x * w).collect();
    let p = dft_power(&windowed);
    let half = column.len() / 2;
    let max = (1..=half).map(|k| p[k]).fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-9 * max.max(1e-300);
    (1..=half).filter(|&k| p[k] >= max - slack).collect()
}

fn column(frames: &Frames, j: usize) -> Vec<f64> {
    frames.iter().map(|r| r[j]).collect()
}

/// `alpha · popstd(dominant bins)`, or `None` when some column has a near tie.
pub fn vibrational(frames: &Frames, alpha: f64) -> Option<f64> {
    let d = frames[0].len();
    let mut bins = Vec::with_capacity(d);
    for j in 0..d {
        let c = dominant_bin_candidates(&column(frames, j));
        if c.len() != 1 {
            return None;
        }
        bins.push(c[0] as f64);
    }
    Some(alpha * popstd(&bins))
}

pub fn popstd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mut m = 0.0;
    for x in v {
        m += x;
    }
    m /= n;
    let mut s = 0.0;
    for x in v {
        s += (x - m) * (x - m);
    }
    (s / n).sqrt()
}

/// Elementwise first differences divided by `dt`.
pub fn differences(rows: &Frames, dt: f64) -> Frames {
    let mut out = Vec::new();
    for i in 1..rows.len() {
        let mut r = Vec::with_capacity(rows[i].len());
        for (cur, prev) in rows[i].iter().zip(&rows[i - 1]) {
            r.push((cur - prev) / dt);
        }
        out.push(r);
    }
    out
}

fn mean_norm(rows: &Frames) -> f64 {
    rows.iter().map(|r| l2(r)).sum::<f64>() / rows.len() as f64
}

pub fn mean_velocity(frames: &Frames, dt: f64) -> f64 {
    mean_norm(&differences(frames, dt))
}

pub fn translational(frames: &Frames, dt: f64) -> f64 {
    let v = differences(frames, dt);
    let a = differences(&v, dt);
    mean_norm(&v) + 0.5 * mean_norm(&a)
}

pub fn cross3(u: &[f64], w: &[f64]) -> [f64; 3] {
    [
        u[1] * w[2] - u[2] * w[1],
        u[2] * w[0] - u[0] * w[2],
        u[0] * w[1] - u[1] * w[0],
    ]
}

/// Rotational term for three-dimensional embeddings via the literal cross product.
pub fn rotational3(frames: &Frames, dt: f64, beta: f64) -> f64 {
    let v = differences(frames, dt);
    let mut total = 0.0;
    for i in 0..v.len() - 1 {
        let dv: Vec<f64> = (0..3).map(|j| v[i + 1][j] - v[i][j]).collect();
        total += l2(&cross3(&v[i], &dv));
    }
    beta * total / (v.len() - 1) as f64
}

/// Linear-interpolation percentile after a full sort.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = q * (s.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

pub fn dynamic_range(samples: &[f64]) -> f64 {
    let abs: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
    let peak = abs.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let q = percentile(&abs, 0.1).max(1e-8);
    (20.0 * (peak / q).log10()).max(0.0)
}

/// Coefficient of variation of the raw step lengths `|E_{i+1} − E_i|`.
pub fn tf_variation(frames: &Frames) -> f64 {
    let steps: Vec<f64> = differences(frames, 1.0).iter().map(|r| l2(r)).collect();
    let m = steps.iter().sum::<f64>() / steps.len() as f64;
    if m == 0.0 {
        0.0
    } else {
        popstd(&steps) / m
    }
}

// ---- metrics ----

/// `(threshold, frr, far)` with acceptance `score > threshold`, counted
/// directly at −∞ and at every distinct observed score.
pub fn sweep(genuine: &[f64], fake: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut cands: Vec<f64> = genuine.iter().chain(fake).cloned().collect();
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    cands.insert(0, f64::NEG_INFINITY);
    cands
        .into_iter()
        .map(|t| {
            let rejected = genuine.iter().filter(|&&s| s <= t).count();
            let accepted = fake.iter().filter(|&&s| s > t).count();
            (
                t,
                rejected as f64 / genuine.len() as f64,
                accepted as f64 / fake.len() as f64,
            )
        })
        .collect()
}

/// EER rate and threshold from the brute-force sweep. A threshold at an
/// observed score is reported as the midpoint to the next distinct score;
/// the two extremes map to the lowest and highest score.
pub fn eer(genuine: &[f64], fake: &[f64]) -> (f64, f64) {
    let pts = sweep(genuine, fake);
    let mut all: Vec<f64> = genuine.iter().chain(fake).cloned().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    let report = |k: usize| -> f64 {
        if k == 0 {
            all[0]
        } else if k == pts.len() - 1 {
            all[all.len() - 1]
        } else {
            0.5 * (all[k - 1] + all[k])
        }
    };
    let mut j = 0;
    while pts[j].1 < pts[j].2 {
        j += 1;
    }
    let (d0, d1) = (pts[j - 1].2 - pts[j - 1].1, pts[j].2 - pts[j].1);
    let a = if d0 - d1 > 0.0 { d0 / (d0 - d1) } else { 1.0 };
    let rate = pts[j - 1].1 + a * (pts[j].1 - pts[j - 1].1);
    let (t0, t1) = (report(j - 1), report(j));
    (rate, t0 + a * (t1 - t0))
}

/// Fraction of (genuine, fake) pairs ranked correctly, ties one half.
pub fn auc(genuine: &[f64], fake: &[f64]) -> f64 {
    let mut wins = 0.0;
    for g in genuine {
        for f in fake {
            if g > f {
                wins += 1.0;
            } else if g == f {
                wins += 0.5;
            }
        }
    }
    wins / (genuine.len() * fake.len()) as f64
}

/// Tandem cost parameters in the order: priors (target, nontarget, spoof),
/// costs (miss_asv, fa_asv, miss_cm, fa_cm), ASV rates (miss, fa, miss_spoof).
pub struct Costs {
    pub pi: [f64; 3],
    pub c: [f64; 4],
    pub asv: [f64; 3],
}

pub fn min_tdcf(genuine: &[f64], fake: &[f64], k: &Costs) -> f64 {
    let [pt, pn, ps] = k.pi;
    let [cm_asv, cfa_asv, cm_cm, cfa_cm] = k.c;
    let [pm_asv, pfa_asv, pm_spoof] = k.asv;
    let c1 = pt * (cm_cm - cm_asv * pm_asv) - pn * cfa_asv * pfa_asv;
    let c2 = cfa_cm * ps * (1.0 - pm_spoof);
    let norm = if c1 < c2 { c1 } else { c2 };
    let mut best = f64::INFINITY;
    for (_, frr, far) in sweep(genuine, fake) {
        let v = (c1 * frr + c2 * far) / norm;
        if v < best {
            best = v;
        }
    }
    best
}

/// Largest ECDF gap, checked at every observed value.
pub fn ks(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter()
        .chain(b)
        .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
        .fold(0.0, f64::max)
}

// ---- uncertainty ----

pub fn entropy_bits(p: f64) -> f64 {
    let h = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    h(p) + h(1.0 - p)
}

/// ECE over ten equal-width bins of the max-class confidence, with the
/// last bin closed on the right.
pub fn ece(p_genuine: &[f64], is_genuine: &[bool]) -> f64 {
    let n = p_genuine.len() as f64;
    let mut total = 0.0;
    for b in 0..10 {
        let (lo, hi) = (b as f64 / 10.0, (b + 1) as f64 / 10.0);
        let mut count = 0.0;
        let mut hits = 0.0;
        let mut conf = 0.0;
        for (p, &g) in p_genuine.iter().zip(is_genuine) {
            let c = p.max(1.0 - p);
            let inside = c >= lo && (c < hi || (b == 9 && c <= hi));
            if inside {
                count += 1.0;
                conf += c;
                let says_genuine = *p >= 1.0 - *p;
                if says_genuine == g {
                    hits += 1.0;
                }
            }
        }
        if count > 0.0 {
            total += count / n * (hits / count - conf / count).abs();
        }
    }
    total
}

// ---- linear algebra ----

/// Orthonormal basis of the span of `vectors` by modified Gram–Schmidt with
/// one re-orthogonalization pass. Directions shorter than `tol` relative to
/// the largest input are dropped.
pub fn gram_schmidt(vectors: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let scale = vectors.iter().map(|v| l2(v)).fold(0.0, f64::max);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut r = v.clone();
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
                for (x, y) in r.iter_mut().zip(q) {
                    *x -= d * y;
                }
            }
        }
        let n = l2(&r);
        if n > tol * scale.max(1e-300) {
            basis.push(r.iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Orthogonal projection of `x` onto the span of an orthonormal basis.
pub fn project(basis: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for q in basis {
        let d: f64 = x.iter().zip(q).map(|(a, b)| a * b).sum();
        for (o, y) in out.iter_mut().zip(q) {
            *o += d * y;
        }
    }
    out
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

// ---- robust statistics ----

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Indices flagged by the median/MAD rule with the usual normal-consistency factor.
pub fn mad_flags(values: &[f64], tau: f64) -> Vec<bool> {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    let mad = median(&dev);
    let limit = if mad < 1e-12 {
        1e-6
    } else {
        tau * 1.4826 * mad
    };
    dev.iter().map(|d| *d > limit).collect()
}

// ---- classifier ----

/// Mean class-weighted cross-entropy of a ReLU network given as flat
/// parameters (per layer: out×in weights row-major, then bias). `masks[r][l]`
/// multiplies hidden layer `l` for row `r`.
pub fn mlp_loss(
    widths: &[usize],
    flat: &[f64],
    masks: &[Vec<Vec<f64>>],
    x: &[Vec<f64>],
    y: &[usize],
    class_weights: [f64; 2],
) -> f64 {
    let mut total = 0.0;
    for (r, row) in x.iter().enumerate() {
        let mut a = row.clone();
        let mut offset = 0;
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let w = &flat[offset..offset + fan_in * fan_out];
            let b = &flat[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut z = vec![0.0; fan_out];
            for o in 0..fan_out {
                let mut s = b[o];
                for i in 0..fan_in {
                    s += w[o * fan_in + i] * a[i];
                }
                z[o] = s;
            }
            if l + 2 < widths.len() {
                for o in 0..fan_out {
                    z[o] = if z[o] > 0.0 { z[o] } else { 0.0 } * masks[r][l][o];
                }
            }
            a = z;
        }
        let m = a[0].max(a[1]);
        let log_norm = m + ((a[0] - m).exp() + (a[1] - m).exp()).ln();
        total += class_weights[y[r]] * (log_norm - a[y[r]]);
    }
    total / x.len() as f64
}
