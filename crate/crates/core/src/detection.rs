//! Gray-labelled constellations, bit mapping and the message-passing
//! detector over the sparse DD operator.
//!
//! The detector runs on the factor graph of `y = H x + w`. Each observation
//! node models the interference from all other connected symbols as Gaussian
//! with matched mean and variance; each symbol node combines the likelihoods
//! from its observations into a damped categorical message.

use num_complex::Complex64;

use crate::effective::EffectiveChannel;
use crate::error::{Error, Result};
use crate::frame::DdGrid;

/// Noise variance used when callers pass zero.
pub const NOISE_FLOOR: f64 = 1e-12;

/// Square QAM (or BPSK for one bit) with Gray labels and unit average energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    bits_per_symbol: usize,
    points: Vec<Complex64>,
}

fn gray(v: usize) -> usize {
    v ^ (v >> 1)
}

impl Constellation {
    pub fn qam(bits_per_symbol: usize) -> Result<Self> {
        if bits_per_symbol == 1 {
            return Ok(Constellation {
                bits_per_symbol,
                points: vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            });
        }
        if bits_per_symbol == 0 || !bits_per_symbol.is_multiple_of(2) || bits_per_symbol > 16 {
            return Err(Error::Config(format!("unsupported QAM order 2^{bits_per_symbol}")));
        }
        let half = bits_per_symbol / 2;
        let side = 1usize << half;
        let scale = (2.0 * ((side * side) as f64 - 1.0) / 3.0).sqrt();
        let level = |label: usize| {
            // Gray label -> amplitude index
            let idx = (0..side).find(|&i| gray(i) == label).unwrap();
            (2.0 * idx as f64 - (side as f64 - 1.0)) / scale
        };
        let points = (0..1usize << bits_per_symbol)
            .map(|label| Complex64::new(level(label >> half), level(label & (side - 1))))
            .collect();
        Ok(Constellation { bits_per_symbol, points })
    }

    pub fn qpsk() -> Self {
        Self::qam(2).unwrap()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    /// Point for label `i`; the label's bits are MSB first.
    pub fn point(&self, i: usize) -> Complex64 {
        self.points[i]
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn label_bits(&self, label: usize) -> impl Iterator<Item = bool> + '_ {
        (0..self.bits_per_symbol).rev().map(move |b| (label >> b) & 1 == 1)
    }

    pub fn label_of(&self, bits: &[bool]) -> usize {
        bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
    }

    /// Nearest point label.
    pub fn slice(&self, v: Complex64) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.points.iter().enumerate() {
            let d = (v - p).norm_sqr();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

fn data_positions(rows: usize, cols: usize, mask: Option<&[bool]>) -> Result<Vec<usize>> {
    match mask {
        None => Ok((0..rows * cols).collect()),
        Some(m) if m.len() == rows * cols => Ok((0..m.len()).filter(|&i| m[i]).collect()),
        Some(m) => Err(Error::Config(format!("mask has {} cells, grid has {}", m.len(), rows * cols))),
    }
}

/// Maps bits (MSB-first per symbol) onto the data cells of an `rows x cols`
/// grid in row-major order. Masked-out cells stay zero.
pub fn map_bits(bits: &[bool], c: &Constellation, rows: usize, cols: usize, mask: Option<&[bool]>) -> Result<DdGrid> {
    let cells = data_positions(rows, cols, mask)?;
    let b = c.bits_per_symbol();
    if bits.len() != cells.len() * b {
        return Err(Error::Config(format!("{} bits for {} data cells of {b} bits each", bits.len(), cells.len())));
    }
    let mut g = DdGrid::zeros(rows, cols);
    for (chunk, &cell) in bits.chunks_exact(b).zip(&cells) {
        g.as_mut_slice()[cell] = c.point(c.label_of(chunk));
    }
    Ok(g)
}

/// Hard-decision bits of the data cells of `grid`, in [`map_bits`] order.
pub fn demap(grid: &DdGrid, c: &Constellation, mask: Option<&[bool]>) -> Result<Vec<bool>> {
    let cells = data_positions(grid.rows(), grid.cols(), mask)?;
    Ok(cells.iter().flat_map(|&i| c.label_bits(c.slice(grid.as_slice()[i]))).collect())
}

/// Message-passing hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpParams {
    pub max_iters: usize,
    /// Weight of the new message, in (0, 1].
    pub damping: f64,
    /// Stop once no message probability moves by more than this.
    pub convergence_eps: f64,
}

impl Default for MpParams {
    fn default() -> Self {
        MpParams { max_iters: 30, damping: 0.6, convergence_eps: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct Detection {
    /// Decided constellation points (zero on masked-out cells).
    pub symbols: DdGrid,
    /// Decided labels of the data cells.
    pub labels: Vec<usize>,
    pub bits: Vec<bool>,
    pub converged: bool,
    pub iterations: usize,
}

/// Detects every cell of `y`.
pub fn mp_detect(
    y: &DdGrid,
    h: &EffectiveChannel,
    noise_var: f64,
    c: &Constellation,
    p: &MpParams,
) -> Result<Detection> {
    mp_detect_masked(y, h, noise_var, c, p, None)
}

/// Detects the cells flagged in `mask`; other input cells are taken as zero
/// and their taps ignored, so known symbols must already be subtracted from `y`.
pub fn mp_detect_masked(
    y: &DdGrid,
    h: &EffectiveChannel,
    noise_var: f64,
    c: &Constellation,
    p: &MpParams,
    mask: Option<&[bool]>,
) -> Result<Detection> {
    if h.is_empty() {
        return Err(Error::Detection("empty channel operator".into()));
    }
    if (y.rows(), y.cols()) != (h.n, h.m) {
        return Err(Error::Config("received grid and operator sizes differ".into()));
    }
    if !(p.damping > 0.0 && p.damping <= 1.0) || p.max_iters == 0 {
        return Err(Error::Config("damping must be in (0, 1] and max_iters positive".into()));
    }
    let cells = h.n * h.m;
    let data = data_positions(h.n, h.m, mask)?;
    let mut var_of_cell = vec![usize::MAX; cells];
    for (v, &cell) in data.iter().enumerate() {
        var_of_cell[cell] = v;
    }
    let noise = if noise_var > 0.0 { noise_var } else { NOISE_FLOOR };
    let q = c.order();
    let pts = c.points();
    let energies: Vec<f64> = pts.iter().map(|a| a.norm_sqr()).collect();

    // edges grouped by variable so each variable's messages are contiguous
    let mut edge_list: Vec<(usize, usize, Complex64)> = Vec::with_capacity(h.taps.len());
    for t in &h.taps {
        let v = var_of_cell[t.in_k * h.m + t.in_l];
        if v != usize::MAX && t.coeff != Complex64::new(0.0, 0.0) {
            edge_list.push((v, t.out_k * h.m + t.out_l, t.coeff));
        }
    }
    edge_list.sort_by_key(|e| (e.0, e.1));
    let edges = edge_list.len();
    let obs_of: Vec<usize> = edge_list.iter().map(|e| e.1).collect();
    let coeff: Vec<Complex64> = edge_list.iter().map(|e| e.2).collect();
    let mut first_edge = vec![0usize; data.len() + 1];
    for e in &edge_list {
        first_edge[e.0 + 1] += 1;
    }
    for v in 0..data.len() {
        first_edge[v + 1] += first_edge[v];
    }
    drop(edge_list);

    let ys = y.as_slice();
    let mut prob = vec![1.0 / q as f64; edges * q];
    let mut mean = vec![Complex64::new(0.0, 0.0); edges];
    let mut var = vec![0.0; edges];
    let mut obs_mean = vec![Complex64::new(0.0, 0.0); cells];
    let mut obs_var = vec![0.0; cells];
    let mut loglik = vec![0.0; edges * q];
    let mut belief = vec![0.0; data.len() * q];
    let mut scratch = vec![0.0; q];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..p.max_iters {
        iterations = iter + 1;
        // symbol -> observation statistics
        obs_mean.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        obs_var.iter_mut().for_each(|v| *v = noise);
        for (e, pe) in prob.chunks_exact(q).enumerate() {
            let mut mu = Complex64::new(0.0, 0.0);
            let mut second = 0.0;
            for ((pt, en), pa) in pts.iter().zip(&energies).zip(pe) {
                mu += pt * pa;
                second += en * pa;
            }
            let hc = coeff[e];
            mean[e] = hc * mu;
            var[e] = (hc.norm_sqr() * (second - mu.norm_sqr())).max(0.0);
            obs_mean[obs_of[e]] += mean[e];
            obs_var[obs_of[e]] += var[e];
        }
        // observation -> symbol log-likelihoods, up to a per-edge constant:
        // -|r - h a|^2 / s2 = (2 Re(conj(h a) r) - |h a|^2) / s2 - |r|^2 / s2
        for (e, ll) in loglik.chunks_exact_mut(q).enumerate() {
            let d = obs_of[e];
            let inv = 1.0 / (obs_var[d] - var[e]).max(noise);
            let r = ys[d] - (obs_mean[d] - mean[e]);
            let hc = coeff[e];
            let z = hc.conj() * r;
            let gain = hc.norm_sqr();
            for ((l, pt), en) in ll.iter_mut().zip(pts).zip(&energies) {
                *l = (2.0 * (pt.re * z.re + pt.im * z.im) - gain * en) * inv;
            }
        }
        // beliefs and damped extrinsic messages
        let mut max_delta: f64 = 0.0;
        for v in 0..data.len() {
            let (lo, hi) = (first_edge[v], first_edge[v + 1]);
            let b = &mut belief[v * q..(v + 1) * q];
            b.iter_mut().for_each(|x| *x = 0.0);
            for ll in loglik[lo * q..hi * q].chunks_exact(q) {
                for (x, l) in b.iter_mut().zip(ll) {
                    *x += l;
                }
            }
            for (ll, pe) in loglik[lo * q..hi * q].chunks_exact(q).zip(prob[lo * q..hi * q].chunks_exact_mut(q)) {
                for ((s, x), l) in scratch.iter_mut().zip(b.iter()).zip(ll) {
                    *s = x - l;
                }
                normalize_log(&mut scratch);
                for (pa, s) in pe.iter_mut().zip(&scratch) {
                    let next = p.damping * s + (1.0 - p.damping) * *pa;
                    max_delta = max_delta.max((next - *pa).abs());
                    *pa = next;
                }
            }
        }
        if max_delta < p.convergence_eps {
            converged = true;
            break;
        }
    }

    // final decisions from the full beliefs of the last pass
    let mut symbols = DdGrid::zeros(h.n, h.m);
    let mut labels = Vec::with_capacity(data.len());
    for (v, &cell) in data.iter().enumerate() {
        let b = &belief[v * q..(v + 1) * q];
        let label = if first_edge[v] == first_edge[v + 1] {
            0
        } else {
            (0..q).fold(0, |best, a| if b[a] > b[best] { a } else { best })
        };
        labels.push(label);
        symbols.as_mut_slice()[cell] = pts[label];
    }
    let bits = labels.iter().flat_map(|&l| c.label_bits(l)).collect();
    Ok(Detection { symbols, labels, bits, converged, iterations })
}

/// Turns log-weights into probabilities in place.
fn normalize_log(w: &mut [f64]) {
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in w.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    w.iter_mut().for_each(|x| *x /= sum);
}

/// Number of differing bits.
pub fn bit_errors(a: &[bool], b: &[bool]) -> usize {
    assert_eq!(a.len(), b.len(), "bit vectors differ in length");
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}
