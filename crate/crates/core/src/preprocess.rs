//! Input-side numerics: 5-point affine face alignment, intensity
//! normalisation and magnitude spectrograms.

use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("landmarks are collinear or coincident")]
    DegenerateLandmarks,
    #[error("non-finite landmark coordinate")]
    NonFinite,
    #[error("range [{lo}, {hi}] is empty")]
    BadRange { lo: f64, hi: f64 },
    #[error("signal of {got} samples is shorter than one window ({window})")]
    SignalTooShort { got: usize, window: usize },
    #[error("invalid spectrogram config: {0}")]
    BadConfig(String),
    #[error("audio file: {0}")]
    BadAudio(String),
    #[error("landmark file line {line}: {message}")]
    BadLandmarkLine { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Left eye, right eye, nose tip, left mouth corner, right mouth corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkSet {
    pub points: [[f64; 2]; 5],
}

impl LandmarkSet {
    pub fn new(points: [[f64; 2]; 5]) -> Result<Self, PreprocessError> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PreprocessError::NonFinite);
        }
        Ok(Self { points })
    }

    /// The common 112×112 five-point face template.
    pub fn template() -> Self {
        Self {
            points: [
                [38.2946, 51.6963],
                [73.5318, 51.5014],
                [56.0252, 71.7366],
                [41.5493, 92.3655],
                [70.7299, 92.2041],
            ],
        }
    }
}

/// `[x', y'] = M · [x, y, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [[f64; 3]; 2],
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        ]
    }

    pub fn linear(&self) -> [[f64; 2]; 2] {
        [[self.m[0][0], self.m[0][1]], [self.m[1][0], self.m[1][1]]]
    }

    pub fn translation(&self) -> [f64; 2] {
        [self.m[0][2], self.m[1][2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentFit {
    pub affine: Affine,
    /// Root-mean-square distance between mapped source and canonical points.
    pub residual: f64,
}

/// Least-squares 6-DOF affine map taking `source` onto `canonical`.
pub fn fit_alignment(source: &LandmarkSet, canonical: &LandmarkSet) -> Result<AlignmentFit, PreprocessError> {
    let src = &source.points;
    // collinearity test on the centred scatter matrix
    let n = src.len() as f64;
    let mean = [
        src.iter().map(|p| p[0]).sum::<f64>() / n,
        src.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in src {
        let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let trace = sxx + syy;
    if trace == 0.0 || (sxx * syy - sxy * sxy) <= 1e-12 * trace * trace {
        return Err(PreprocessError::DegenerateLandmarks);
    }

    let a = DMatrix::from_fn(5, 3, |i, j| if j < 2 { src[i][j] } else { 1.0 });
    let b = DMatrix::from_fn(5, 2, |i, j| canonical.points[i][j]);
    let x = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|_| PreprocessError::DegenerateLandmarks)?;
    let affine = Affine {
        m: [[x[(0, 0)], x[(1, 0)], x[(2, 0)]], [x[(0, 1)], x[(1, 1)], x[(2, 1)]]],
    };
    let sq: f64 = src
        .iter()
        .zip(&canonical.points)
        .map(|(&s, c)| {
            let p = affine.apply(s);
            (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)
        })
        .sum();
    Ok(AlignmentFit {
        affine,
        residual: (sq / n).sqrt(),
    })
}

pub fn apply_alignment(affine: &Affine, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    points.iter().map(|&p| affine.apply(p)).collect()
}

/// Linear map of `[lo, hi]` onto `[-1, 1]`; values outside are clamped.
pub fn normalize_intensity(values: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>, PreprocessError> {
    if hi <= lo || !lo.is_finite() || !hi.is_finite() {
        return Err(PreprocessError::BadRange { lo, hi });
    }
    Ok(values
        .iter()
        .map(|&v| (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrogramConfig {
    pub sample_rate_hz: u32,
    pub window_ms: f64,
    pub overlap_ms: f64,
    /// Read `overlap_ms` as the hop instead of the shared span.
    pub overlap_is_hop: bool,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 44_100,
            window_ms: 33.0,
            overlap_ms: 11.0,
            overlap_is_hop: false,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.sample_rate_hz == 0 {
            return Err(PreprocessError::BadConfig("sample rate must be positive".into()));
        }
        if !(self.window_ms > self.overlap_ms && self.overlap_ms > 0.0) {
            return Err(PreprocessError::BadConfig("need window > overlap > 0".into()));
        }
        if self.hop_samples() == 0 {
            return Err(PreprocessError::BadConfig("hop rounds to zero samples".into()));
        }
        Ok(())
    }

    fn samples(&self, ms: f64) -> usize {
        (ms / 1000.0 * f64::from(self.sample_rate_hz)).round() as usize
    }

    pub fn window_samples(&self) -> usize {
        self.samples(self.window_ms)
    }

    pub fn hop_samples(&self) -> usize {
        if self.overlap_is_hop {
            self.samples(self.overlap_ms)
        } else {
            self.window_samples() - self.samples(self.overlap_ms)
        }
    }

    pub fn fft_size(&self) -> usize {
        self.window_samples().next_power_of_two()
    }

    pub fn bins(&self) -> usize {
        self.fft_size() / 2 + 1
    }

    /// `floor((N − window) / hop) + 1`, or `None` when the signal is shorter
    /// than one window.
    pub fn frame_count(&self, signal_len: usize) -> Option<usize> {
        let w = self.window_samples();
        (signal_len >= w).then(|| (signal_len - w) / self.hop_samples() + 1)
    }
}

/// Frames × bins magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.bins..(i + 1) * self.bins]
    }
}

/// Raw DFT magnitudes (rectangular window, zero-padded), one row per frame.
pub fn magnitude_frames(signal: &[f64], cfg: &SpectrogramConfig) -> Result<Spectrogram, PreprocessError> {
    cfg.validate()?;
    let window = cfg.window_samples();
    let frames = cfg.frame_count(signal.len()).ok_or(PreprocessError::SignalTooShort {
        got: signal.len(),
        window,
    })?;
    let (size, bins, hop) = (cfg.fft_size(), cfg.bins(), cfg.hop_samples());
    let fft = FftPlanner::new().plan_fft_forward(size);
    let mut buf = vec![Complex::new(0.0, 0.0); size];
    let mut data = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * hop;
        for (k, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(if k < window { signal[start + k] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        data.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram { frames, bins, data })
}

/// Magnitude spectrogram min-max normalised to `[-1, 1]` over the whole
/// clip. A constant spectrogram maps to zeros.
pub fn spectrogram(signal: &[f64], cfg: &SpectrogramConfig) -> Result<Spectrogram, PreprocessError> {
    let mut s = magnitude_frames(signal, cfg)?;
    let lo = s.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        s.data = normalize_intensity(&s.data, lo, hi)?;
    } else {
        s.data.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(s)
}

const AUDIO_MAGIC: &str = "AFAUDIO";

/// `AFAUDIO rate=<hz> length=<n>\n` followed by `n` little-endian f64 samples.
pub fn write_audio<W: Write>(mut w: W, rate: u32, samples: &[f64]) -> io::Result<()> {
    writeln!(w, "{AUDIO_MAGIC} rate={rate} length={}", samples.len())?;
    for s in samples {
        w.write_all(&s.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_audio<R: Read>(mut r: R) -> Result<(u32, Vec<f64>), PreprocessError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| PreprocessError::BadAudio("missing header".into()))?;
    let header =
        std::str::from_utf8(&bytes[..nl]).map_err(|_| PreprocessError::BadAudio("header is not UTF-8".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(AUDIO_MAGIC) {
        return Err(PreprocessError::BadAudio("bad magic".into()));
    }
    let (mut rate, mut len) = (None, None);
    for p in parts {
        match p.split_once('=') {
            Some(("rate", v)) => rate = v.parse::<u32>().ok(),
            Some(("length", v)) => len = v.parse::<usize>().ok(),
            _ => return Err(PreprocessError::BadAudio(format!("unknown header field {p:?}"))),
        }
    }
    let (rate, len) = rate
        .zip(len)
        .ok_or_else(|| PreprocessError::BadAudio("header needs rate and length".into()))?;
    let body = &bytes[nl + 1..];
    if body.len() != len * 8 {
        return Err(PreprocessError::BadAudio(format!(
            "expected {} sample bytes, found {}",
            len * 8,
            body.len()
        )));
    }
    let samples = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((rate, samples))
}

pub fn load_audio(path: &Path) -> Result<(u32, Vec<f64>), PreprocessError> {
    read_audio(std::fs::File::open(path)?)
}

/// Parse `frame, x1, y1, ..., x5, y5` lines (an optional header starting
/// with `frame` is skipped).
pub fn parse_landmarks(text: &str) -> Result<Vec<(String, LandmarkSet)>, PreprocessError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("frame") {
            continue;
        }
        let err = |message: &str| PreprocessError::BadLandmarkLine {
            line: i + 1,
            message: message.to_string(),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 11 {
            return Err(err("expected 11 fields"));
        }
        let mut points = [[0.0; 2]; 5];
        for (k, v) in fields[1..].iter().enumerate() {
            points[k / 2][k % 2] = v.parse().map_err(|_| err("bad coordinate"))?;
        }
        out.push((fields[0].to_string(), LandmarkSet::new(points)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn shifted(l: &LandmarkSet, f: impl Fn([f64; 2]) -> [f64; 2]) -> LandmarkSet {
        LandmarkSet::new(l.points.map(f)).unwrap()
    }

    /// Normal-equation solution by Cramer's rule, one output coordinate at a time.
    fn oracle_fit(src: &LandmarkSet, dst: &LandmarkSet) -> [[f64; 3]; 2] {
        let mut ata = [[0.0; 3]; 3];
        let mut atb = [[0.0; 3]; 2];
        for (s, d) in src.points.iter().zip(&dst.points) {
            let row = [s[0], s[1], 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
                atb[0][i] += row[i] * d[0];
                atb[1][i] += row[i] * d[1];
            }
        }
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det3(ata);
        let mut out = [[0.0; 3]; 2];
        for (r, rhs) in atb.iter().enumerate() {
            for c in 0..3 {
                let mut m = ata;
                for i in 0..3 {
                    m[i][c] = rhs[i];
                }
                out[r][c] = det3(m) / d;
            }
        }
        out
    }

    #[test]
    fn identity_and_translation() {
        let t = LandmarkSet::template();
        let fit = fit_alignment(&t, &t).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert!((fit.affine.m[r][c] - Affine::IDENTITY.m[r][c]).abs() < 1e-10);
            }
        }
        let src = shifted(&t, |p| [p[0] + 3.0, p[1] + 4.0]);
        let fit = fit_alignment(&src, &t).unwrap();
        let l = fit.affine.linear();
        assert!((l[0][0] - 1.0).abs() < 1e-10 && l[0][1].abs() < 1e-10);
        assert!((l[1][1] - 1.0).abs() < 1e-10 && l[1][0].abs() < 1e-10);
        let tr = fit.affine.translation();
        assert!((tr[0] + 3.0).abs() < 1e-9 && (tr[1] + 4.0).abs() < 1e-9);
    }

    #[test]
    fn scale_matches_oracle() {
        let t = LandmarkSet::template();
        let src = shifted(&t, |p| [2.0 * p[0], 2.0 * p[1]]);
        let fit = fit_alignment(&src, &t).unwrap();
        assert!((fit.affine.m[0][0] - 0.5).abs() < 1e-12);
        assert!((fit.affine.m[1][1] - 0.5).abs() < 1e-12);
        assert!(fit.residual < 1e-9);
        let o = oracle_fit(&src, &t);
        for (fr, or) in fit.affine.m.iter().zip(&o) {
            for (f, e) in fr.iter().zip(or) {
                assert!((f - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inexact_fit_matches_oracle() {
        let t = LandmarkSet::template();
        let mut src = t;
        src.points[2][0] += 4.0;
        src.points[4][1] -= 2.5;
        let fit = fit_alignment(&src, &t).unwrap();
        let o = oracle_fit(&src, &t);
        for (fr, or) in fit.affine.m.iter().zip(&o) {
            for (f, e) in fr.iter().zip(or) {
                assert!((f - e).abs() < 1e-9);
            }
        }
        assert!(fit.residual > 0.1);
    }

    #[test]
    fn degenerate_landmarks() {
        let line = LandmarkSet::new([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]]).unwrap();
        assert!(matches!(
            fit_alignment(&line, &LandmarkSet::template()),
            Err(PreprocessError::DegenerateLandmarks)
        ));
        let point = LandmarkSet::new([[5.0, 5.0]; 5]).unwrap();
        assert!(fit_alignment(&point, &LandmarkSet::template()).is_err());
        assert!(LandmarkSet::new([[f64::NAN, 0.0]; 5]).is_err());
    }

    #[test]
    fn apply_examples() {
        let pts = [[0.0, 0.0], [2.5, -1.0]];
        assert_eq!(apply_alignment(&Affine::IDENTITY, &pts), pts.to_vec());
        let shift = Affine {
            m: [[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]],
        };
        assert_eq!(apply_alignment(&shift, &[[0.0, 0.0]]), vec![[1.0, 0.0]]);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_intensity(&[127.5], 0.0, 255.0).unwrap(), vec![0.0]);
        assert_eq!(normalize_intensity(&[0.0, 255.0], 0.0, 255.0).unwrap(), vec![-1.0, 1.0]);
        let v = normalize_intensity(&[64.0], 0.0, 255.0).unwrap()[0];
        assert!((v - (2.0 * 64.0 / 255.0 - 1.0)).abs() < 1e-15);
        assert!((v + 0.498_039_215_686_274_5).abs() < 1e-15);
        assert_eq!(
            normalize_intensity(&[-10.0, 300.0], 0.0, 255.0).unwrap(),
            vec![-1.0, 1.0]
        );
        assert!(normalize_intensity(&[1.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn config_arithmetic() {
        let c = SpectrogramConfig::default();
        assert_eq!(c.window_samples(), 1455);
        assert_eq!(c.hop_samples(), 970);
        assert_eq!(c.fft_size(), 2048);
        assert_eq!(c.bins(), 1025);
        let hop = SpectrogramConfig {
            overlap_is_hop: true,
            ..c
        };
        assert_eq!(hop.hop_samples(), 485);
        let bad = SpectrogramConfig { overlap_ms: 40.0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_frame_boundary() {
        let c = SpectrogramConfig::default();
        let s = spectrogram(&vec![0.1; 1455], &c).unwrap();
        assert_eq!(s.frames, 1);
        assert!(matches!(
            spectrogram(&vec![0.1; 1454], &c),
            Err(PreprocessError::SignalTooShort {
                got: 1454,
                window: 1455
            })
        ));
    }

    #[test]
    fn sine_peaks_at_its_bin_and_matches_naive_dft() {
        let c = SpectrogramConfig::default();
        let k = 37.0;
        // bin-centred for the zero-padded transform over the window span
        let signal: Vec<f64> = (0..1455).map(|n| (2.0 * PI * k * n as f64 / 2048.0).sin()).collect();
        let raw = magnitude_frames(&signal, &c).unwrap();
        let row = raw.frame(0);
        let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(peak, 37);
        for bin in [0usize, 5, 37, 38, 512, 1024] {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &x) in signal.iter().enumerate() {
                let ang = -2.0 * PI * (bin * n) as f64 / 2048.0;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            let naive = (re * re + im * im).sqrt();
            assert!((row[bin] - naive).abs() < 1e-8 * naive.max(1.0), "bin {bin}");
        }
        let norm = spectrogram(&signal, &c).unwrap();
        assert_eq!(norm.frame(0)[37], 1.0);
        assert!(norm.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn audio_round_trip() {
        let samples = vec![0.5, -0.25, f64::MIN_POSITIVE, 1e300];
        let mut buf = Vec::new();
        write_audio(&mut buf, 44_100, &samples).unwrap();
        assert!(buf.starts_with(b"AFAUDIO rate=44100 length=4\n"));
        let (rate, back) = read_audio(buf.as_slice()).unwrap();
        assert_eq!(rate, 44_100);
        assert_eq!(back, samples);
        assert!(read_audio(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn landmark_file() {
        let text = "frame,x1,y1,x2,y2,x3,y3,x4,y4,x5,y5\n0,1,2,3,4,5,6,7,8,9,10\n";
        let parsed = parse_landmarks(text).unwrap();
        assert_eq!(parsed[0].1.points[4], [9.0, 10.0]);
        assert!(parse_landmarks("0,1,2").is_err());
    }

    fn arb_affine() -> impl Strategy<Value = Affine> {
        (0.3f64..3.0, -PI..PI, -0.5f64..0.5, -50.0f64..50.0, -50.0f64..50.0).prop_map(|(s, th, shear, tx, ty)| {
            let (c, sn) = (th.cos(), th.sin());
            Affine {
                m: [[s * c, -s * sn + shear, tx], [s * sn, s * c, ty]],
            }
        })
    }

    proptest! {
        #[test]
        fn exact_affines_are_recovered(a in arb_affine()) {
            let canon = LandmarkSet::template();
            // source = inverse image of canonical under `a`, so `a` is the exact fit
            let l = a.linear();
            let det = l[0][0] * l[1][1] - l[0][1] * l[1][0];
            let inv = |p: [f64; 2]| {
                let (x, y) = (p[0] - a.m[0][2], p[1] - a.m[1][2]);
                [(l[1][1] * x - l[0][1] * y) / det, (-l[1][0] * x + l[0][0] * y) / det]
            };
            let src = shifted(&canon, inv);
            let fit = fit_alignment(&src, &canon).unwrap();
            prop_assert!(fit.residual < 1e-9, "{}", fit.residual);
            let mapped = apply_alignment(&fit.affine, &src.points);
            for (m, c) in mapped.iter().zip(&canon.points) {
                prop_assert!((m[0] - c[0]).abs() < 1e-9 && (m[1] - c[1]).abs() < 1e-9);
            }
        }

        #[test]
        fn rotation_equivariance(th in -PI..PI, dx in -5.0f64..5.0) {
            let canon = LandmarkSet::template();
            let mut src = canon;
            src.points[2][0] += dx;
            let base = fit_alignment(&src, &canon).unwrap().affine.linear();
            let (c, s) = (th.cos(), th.sin());
            let rotated = shifted(&src, |p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]);
            let fit = fit_alignment(&rotated, &canon).unwrap().affine.linear();
            // fit = base · R⁻¹, with R⁻¹ = Rᵀ
            let rinv = [[c, s], [-s, c]];
            for i in 0..2 {
                for j in 0..2 {
                    let e = base[i][0] * rinv[0][j] + base[i][1] * rinv[1][j];
                    prop_assert!((fit[i][j] - e).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn normalize_monotone(a in -100.0f64..400.0, b in -100.0f64..400.0) {
            let v = normalize_intensity(&[a, b], 0.0, 255.0).unwrap();
            if a <= b {
                prop_assert!(v[0] <= v[1]);
            }
        }

        #[test]
        fn frame_count_formula(n in 1455usize..20_000) {
            let c = SpectrogramConfig::default();
            prop_assert_eq!(c.frame_count(n), Some((n - 1455) / 970 + 1));
            let mut last_start = 0;
            let frames = c.frame_count(n).unwrap();
            if frames > 0 {
                last_start = (frames - 1) * 970;
            }
            prop_assert!(last_start + 1455 <= n);
            prop_assert!(last_start + 970 + 1455 > n);
        }
    }
}
