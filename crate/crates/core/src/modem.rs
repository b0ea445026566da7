//! 16PSK / 16APSK modulation with coherent hard-decision detection.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::math::{erfc, sin, sqrt};
use crate::{ComplexSample, Error, Result};

/// A sequence of bits, one per byte (0 or 1), most significant bit of each
/// word first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitStream {
    bits: Vec<u8>,
}

impl BitStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bits(bits: Vec<u8>) -> Self {
        debug_assert!(bits.iter().all(|&b| b <= 1));
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn push_word(&mut self, value: u32, width: u32) {
        for i in (0..width).rev() {
            self.bits.push(((value >> i) & 1) as u8);
        }
    }

    pub fn read_word(&self, offset: usize, width: u32) -> u32 {
        self.bits[offset..offset + width as usize]
            .iter()
            .fold(0, |acc, &b| (acc << 1) | b as u32)
    }

    pub fn truncate(&mut self, len: usize) {
        self.bits.truncate(len);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modulation {
    Psk16,
    Apsk16,
}

impl Modulation {
    pub const fn name(self) -> &'static str {
        match self {
            Modulation::Psk16 => "16psk",
            Modulation::Apsk16 => "16apsk",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "16psk" | "psk16" => Some(Modulation::Psk16),
            "16apsk" | "apsk16" => Some(Modulation::Apsk16),
            _ => None,
        }
    }

    pub fn constellation(self, apsk_gamma: f64) -> Result<Constellation> {
        match self {
            Modulation::Psk16 => build_psk(16),
            Modulation::Apsk16 => build_apsk16(apsk_gamma),
        }
    }
}

/// Default outer/inner ring radius ratio for 16APSK.
pub const DEFAULT_APSK_GAMMA: f64 = 2.57;

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: usize,
    bits_per_symbol: u32,
    points: Vec<ComplexSample>,
    /// `labels[i]` is the bit pattern carried by `points[i]`.
    labels: Vec<u32>,
    /// Inverse of `labels`.
    index_of_label: Vec<usize>,
}

impl Constellation {
    fn from_parts(points: Vec<ComplexSample>, labels: Vec<u32>) -> Self {
        let order = points.len();
        let mut index_of_label = alloc::vec![usize::MAX; order];
        for (i, &l) in labels.iter().enumerate() {
            index_of_label[l as usize] = i;
        }
        debug_assert!(index_of_label.iter().all(|&i| i != usize::MAX));
        Self {
            order,
            bits_per_symbol: order.trailing_zeros(),
            points,
            labels,
            index_of_label,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits_per_symbol
    }

    pub fn points(&self) -> &[ComplexSample] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn point_for_label(&self, label: u32) -> ComplexSample {
        self.points[self.index_of_label[label as usize]]
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.order as f64
    }

    /// Index of the nearest point; ties go to the lowest index.
    pub fn nearest(&self, y: ComplexSample) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

#[inline]
fn gray(k: u32) -> u32 {
    k ^ (k >> 1)
}

/// M-PSK at `exp(j2πk/M)` with reflected-binary Gray labels, so points
/// adjacent on the circle (including the wrap) differ in exactly one bit.
pub fn build_psk(order: usize) -> Result<Constellation> {
    if order < 2 || !order.is_power_of_two() {
        return Err(Error::param("psk order", order as f64));
    }
    let points = (0..order)
        .map(|k| ComplexSample::from_polar(1.0, 2.0 * PI * k as f64 / order as f64))
        .collect();
    let labels = (0..order as u32).map(gray).collect();
    Ok(Constellation::from_parts(points, labels))
}

/// 4+12 two-ring APSK normalized to unit mean energy.
///
/// Inner ring: radius `r1`, phases `π/4 + kπ/2`. Outer ring: radius
/// `γ·r1`, phases `2πk/12`. `r1 = sqrt(16 / (4 + 12γ²))`.
///
/// Labels: the two MSBs select the ring segment (`00` inner, `01`, `11`,
/// `10` for the three consecutive 4-point arcs of the outer ring) and the
/// two LSBs are Gray-coded along the segment, reflected on the middle arc
/// so that arc boundaries differ in a single bit.
pub fn build_apsk16(gamma: f64) -> Result<Constellation> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::param("apsk gamma", gamma));
    }
    let r1 = sqrt(16.0 / (4.0 + 12.0 * gamma * gamma));
    let r2 = gamma * r1;
    let mut points = Vec::with_capacity(16);
    let mut labels = Vec::with_capacity(16);
    for k in 0..4u32 {
        points.push(ComplexSample::from_polar(r1, FRAC_PI_4 + k as f64 * FRAC_PI_2));
        labels.push(gray(k));
    }
    const ARC_MSB: [u32; 3] = [0b01, 0b11, 0b10];
    for k in 0..12u32 {
        points.push(ComplexSample::from_polar(r2, 2.0 * PI * k as f64 / 12.0));
        let arc = (k / 4) as usize;
        let pos = if arc == 1 { 3 - k % 4 } else { k % 4 };
        labels.push((ARC_MSB[arc] << 2) | gray(pos));
    }
    Ok(Constellation::from_parts(points, labels))
}

/// Symbols plus the number of zero bits appended to fill the last symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulated {
    pub symbols: Vec<ComplexSample>,
    pub pad_bits: usize,
}

pub fn modulate(bits: &BitStream, c: &Constellation) -> Modulated {
    let k = c.bits_per_symbol() as usize;
    let pad_bits = (k - bits.len() % k) % k;
    let mut padded = bits.clone();
    for _ in 0..pad_bits {
        padded.bits.push(0);
    }
    let symbols = (0..padded.len() / k)
        .map(|s| c.point_for_label(padded.read_word(s * k, k as u32)))
        .collect();
    Modulated { symbols, pad_bits }
}

/// Equalizes with `gain`, slices to the nearest point and emits its label.
pub fn demodulate_hard(received: &[ComplexSample], gain: ComplexSample, c: &Constellation) -> Result<BitStream> {
    if gain.norm_sqr() == 0.0 {
        return Err(Error::DeepFade);
    }
    let mut out = BitStream::new();
    for &y in received {
        let idx = c.nearest(y / gain);
        out.push_word(c.labels[idx], c.bits_per_symbol());
    }
    Ok(out)
}

/// As [`demodulate_hard`] with a separate gain per symbol.
pub fn demodulate_hard_per_symbol(pairs: &[(ComplexSample, ComplexSample)], c: &Constellation) -> Result<BitStream> {
    let mut out = BitStream::new();
    for &(y, h) in pairs {
        if h.norm_sqr() == 0.0 {
            return Err(Error::DeepFade);
        }
        out.push_word(c.labels[c.nearest(y / h)], c.bits_per_symbol());
    }
    Ok(out)
}

/// Gaussian tail `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / core::f64::consts::SQRT_2)
}

/// Nearest-neighbour union approximation of M-PSK symbol error rate,
/// `2·Q(sqrt(2·Es/N0)·sin(π/M))`.
pub fn psk_ser_approx(order: usize, es_n0_linear: f64) -> f64 {
    2.0 * q_function(sqrt(2.0 * es_n0_linear) * sin(PI / order as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec;

    #[test]
    fn psk_reference_points() {
        let c16 = build_psk(16).unwrap();
        assert!((c16.points()[0] - ComplexSample::new(1.0, 0.0)).norm() < 1e-15);
        let c4 = build_psk(4).unwrap();
        assert!((c4.points()[1] - ComplexSample::new(0.0, 1.0)).norm() < 1e-15);
        assert!(build_psk(6).is_err());
    }

    #[test]
    fn psk_gray_adjacency() {
        let c = build_psk(16).unwrap();
        for k in 0..16 {
            let a = c.labels()[k];
            let b = c.labels()[(k + 1) % 16];
            assert_eq!((a ^ b).count_ones(), 1);
        }
    }

    #[test]
    fn apsk_energy_and_structure() {
        let c = build_apsk16(2.57).unwrap();
        assert!((c.mean_energy() - 1.0).abs() < 1e-12);
        let r1: f64 = (16.0 / (4.0 + 12.0 * 2.57f64 * 2.57)).sqrt();
        let r2 = 2.57 * r1;
        assert!(((4.0 * r1 * r1 + 12.0 * r2 * r2) / 16.0 - 1.0).abs() < 1e-12);
        for k in 0..4 {
            let expect = ComplexSample::from_polar(r1, FRAC_PI_4 + k as f64 * FRAC_PI_2);
            assert!((c.points()[k] - expect).norm() < 1e-12);
        }
        let mut labels = c.labels().to_vec();
        labels.sort_unstable();
        assert_eq!(labels, (0..16).collect::<std::vec::Vec<_>>());
        // ring index lives in the two MSBs
        assert!(c.labels()[..4].iter().all(|l| l >> 2 == 0));
        assert!(c.labels()[4..].iter().all(|l| l >> 2 != 0));
    }

    #[test]
    fn apsk_degenerate_ring_merge() {
        let c = build_apsk16(1.0).unwrap();
        assert!(c.points().iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn modulate_padding() {
        let c = build_psk(16).unwrap();
        assert!(modulate(&BitStream::new(), &c).symbols.is_empty());
        let m = modulate(&BitStream::from_bits(vec![1; 10]), &c);
        assert_eq!(m.symbols.len(), 3);
        assert_eq!(m.pad_bits, 2);
        for k in 0..16u32 {
            let mut b = BitStream::new();
            b.push_word(c.labels()[k as usize], 4);
            assert_eq!(modulate(&b, &c).symbols[0], c.points()[k as usize]);
        }
    }

    #[test]
    fn equalization_is_exact() {
        let c = build_apsk16(DEFAULT_APSK_GAMMA).unwrap();
        let g = ComplexSample::new(0.3, -1.7);
        for k in 0..16 {
            let out = demodulate_hard(&[c.points()[k] * g], g, &c).unwrap();
            assert_eq!(out.read_word(0, 4), c.labels()[k]);
        }
        assert_eq!(demodulate_hard(&[g], ComplexSample::new(0.0, 0.0), &c), Err(Error::DeepFade));
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let points = alloc::vec![ComplexSample::new(1.0, 0.0), ComplexSample::new(-1.0, 0.0)];
        let c = Constellation::from_parts(points, alloc::vec![0, 1]);
        assert_eq!(c.nearest(ComplexSample::new(0.0, 0.5)), 0);
    }

    #[test]
    fn ser_approximation_sanity() {
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
        assert!(psk_ser_approx(16, 10f64.powf(1.5)) < psk_ser_approx(16, 10.0));
    }
}
