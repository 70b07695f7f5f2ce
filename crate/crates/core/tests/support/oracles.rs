//! Brute-force reference implementations used as test oracles.

/// Index of the row of `table` with the largest cosine similarity to `z`,
/// lowest index on ties. Rows are normalized before the dot product.
pub fn cosine_argmax(z: &[f64], table: &[f64], dim: usize) -> usize {
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let zn: Vec<f64> = z.iter().map(|a| a / norm(z)).collect();
    let mut best = 0;
    let mut best_cos = f64::NEG_INFINITY;
    for (i, row) in table.chunks(dim).enumerate() {
        let n = norm(row);
        let cos: f64 = row.iter().zip(&zn).map(|(r, q)| (r / n) * q).sum();
        if cos > best_cos {
            best = i;
            best_cos = cos;
        }
    }
    best
}

/// Indices of points no other point weakly dominates with one strict
/// improvement, in ascending index order.
pub fn pareto_brute(points: &[(f64, f64)]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            let (xi, yi) = points[i];
            !points.iter().any(|&(xj, yj)| xj <= xi && yj <= yi && (xj < xi || yj < yi))
        })
        .collect()
}

const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn gauss2d() -> Vec<Vec<f64>> {
    let mut k = vec![vec![0.0; 11]; 11];
    let mut s = 0.0;
    for (y, row) in k.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let (dx, dy) = (x as f64 - 5.0, y as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    k.iter_mut().flatten().for_each(|v| *v /= s);
    k
}

/// Single-scale SSIM map means `(ssim, cs)` with a direct 2-D window.
fn ssim_direct(a: &[Vec<f64>], b: &[Vec<f64>]) -> (f64, f64) {
    let k = gauss2d();
    let (h, w) = (a.len(), a[0].len());
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (mut ssim, mut cs, mut n) = (0.0, 0.0, 0.0);
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..11 {
                for dx in 0..11 {
                    let (p, q, wt) = (a[y + dy][x + dx], b[y + dy][x + dx], k[dy][dx]);
                    ma += wt * p;
                    mb += wt * q;
                    saa += wt * p * p;
                    sbb += wt * q * q;
                    sab += wt * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            let c = (2.0 * cov + c2) / (va + vb + c2);
            ssim += c * (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            cs += c;
            n += 1.0;
        }
    }
    (ssim / n, cs / n)
}

fn halve(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a.len() / 2)
        .map(|y| {
            (0..a[0].len() / 2)
                .map(|x| (a[2 * y][2 * x] + a[2 * y][2 * x + 1] + a[2 * y + 1][2 * x] + a[2 * y + 1][2 * x + 1]) / 4.0)
                .collect()
        })
        .collect()
}

/// MS-SSIM of two gray images in `[0, 1]`, weights renormalized over the
/// scales that fit an 11-pixel window.
pub fn ms_ssim_gray(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut scales = 0;
    let (mut h, mut w) = (a.len(), a[0].len());
    while scales < 5 && h >= 11 && w >= 11 {
        scales += 1;
        h /= 2;
        w /= 2;
    }
    let total: f64 = WEIGHTS[..scales].iter().sum();
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    let mut out = 1.0;
    for s in 0..scales {
        let (ssim, cs) = ssim_direct(&a, &b);
        let v = if s + 1 == scales { ssim } else { cs };
        out *= v.max(0.0).powf(WEIGHTS[s] / total);
        a = halve(&a);
        b = halve(&b);
    }
    out.clamp(0.0, 1.0)
}

/// `w × h` checkerboard of `cell`-pixel squares with values `lo` and `hi`.
pub fn checkerboard(h: usize, w: usize, cell: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..h).map(|y| (0..w).map(|x| if (y / cell + x / cell) % 2 == 0 { lo } else { hi }).collect()).collect()
}
