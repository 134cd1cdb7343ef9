//! Sinusoidal encodings of pairwise box geometry and frame distance.

use crate::model::BoundingBox;

/// Log-ratio relation between a target and a candidate box:
/// `⟨log|Δx|/w_j, log|Δy|/h_j, log w_i/w_j, log h_i/h_j⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeomRelation(pub [f64; 4]);

/// Concatenated sinusoid embedding of a [`GeomRelation`], length `4·d_phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialEmbedding(pub Vec<f64>);

/// Sinusoid embedding of a frame distance, length `d_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEmbedding(pub Vec<f64>);

/// Inverse wavelengths `base^{-2z/dim}` for `z = 0..dim/2`.
pub fn frequencies(dim: usize, base: f64) -> Vec<f64> {
    (0..dim / 2)
        .map(|z| base.powf(-(2.0 * z as f64) / dim as f64))
        .collect()
}

/// Writes the interleaved `[sin, cos, sin, cos, …]` embedding of `r` into `out`.
#[inline]
pub fn sinusoid_into(r: f64, freqs: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), 2 * freqs.len());
    for (pair, &f) in out.chunks_exact_mut(2).zip(freqs) {
        let (s, c) = (r * f).sin_cos();
        pair[0] = s;
        pair[1] = c;
    }
}

/// Entry `2z` is `sin(r / base^{2z/dim})`, entry `2z+1` the matching cosine.
///
/// Panics if `dim` is odd.
pub fn sinusoid_embed(r: f64, dim: usize, base: f64) -> Vec<f64> {
    assert!(dim.is_multiple_of(2), "sinusoid dimension must be even, got {dim}");
    let mut out = vec![0.0; dim];
    sinusoid_into(r, &frequencies(dim, base), &mut out);
    out
}

/// Scale- and translation-invariant relation of `target` to `candidate`.
///
/// The offset ratios are floored at `eps_geom` before the log so identical
/// centers stay finite.
#[inline]
pub fn geometric_relation(target: &BoundingBox, candidate: &BoundingBox, eps_geom: f64) -> GeomRelation {
    let dx = ((target.cx - candidate.cx).abs() / candidate.w).max(eps_geom);
    let dy = ((target.cy - candidate.cy).abs() / candidate.h).max(eps_geom);
    GeomRelation([
        dx.ln(),
        dy.ln(),
        (target.w / candidate.w).ln(),
        (target.h / candidate.h).ln(),
    ])
}

/// Writes the `4·d_phi` embedding of `rel` into `out` given precomputed frequencies.
#[inline]
pub fn spatial_embed_into(rel: &GeomRelation, freqs: &[f64], out: &mut [f64]) {
    let d_phi = 2 * freqs.len();
    for (k, &r) in rel.0.iter().enumerate() {
        sinusoid_into(r, freqs, &mut out[k * d_phi..(k + 1) * d_phi]);
    }
}

pub fn spatial_embed(rel: &GeomRelation, d_phi: usize, base: f64) -> SpatialEmbedding {
    assert!(d_phi.is_multiple_of(2), "d_phi must be even, got {d_phi}");
    let mut out = vec![0.0; 4 * d_phi];
    spatial_embed_into(rel, &frequencies(d_phi, base), &mut out);
    SpatialEmbedding(out)
}

/// Embedding of the frame distance `tau = t_candidate − t_target`.
pub fn temporal_embed(tau: i64, d_v: usize, base: f64) -> TemporalEmbedding {
    TemporalEmbedding(sinusoid_embed(tau as f64, d_v, base))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zero_input_gives_sin_cos_pattern() {
        assert_eq!(
            sinusoid_embed(0.0, 8, 1000.0),
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn first_pair_is_plain_sin_cos() {
        let e = sinusoid_embed(1.0, 8, 1000.0);
        assert!(close(e[0], 0.841_470_984_807_896_5, 1e-15));
        assert!(close(e[1], 0.540_302_305_868_139_8, 1e-15));
    }

    #[test]
    fn second_frequency_hits_pi() {
        // entry 2 uses wavelength 1000^{2/8}
        let r = std::f64::consts::PI * 1000f64.powf(0.25);
        let e = sinusoid_embed(r, 8, 1000.0);
        assert!(e[2].abs() < 1e-9, "{}", e[2]);
    }

    #[test]
    fn first_pair_has_period_two_pi() {
        let two_pi = 2.0 * std::f64::consts::PI;
        for &r in &[0.3, -1.7, 4.2] {
            let a = sinusoid_embed(r, 4, 1000.0);
            let b = sinusoid_embed(r + two_pi, 4, 1000.0);
            assert!(close(a[0], b[0], 1e-12) && close(a[1], b[1], 1e-12));
        }
    }

    #[test]
    fn identical_boxes_hit_the_offset_floor() {
        let b = BoundingBox::new(3.0, -2.0, 5.0, 7.0);
        let r = geometric_relation(&b, &b, 1e-3);
        assert_eq!(r.0, [1e-3f64.ln(), 1e-3f64.ln(), 0.0, 0.0]);
    }

    #[test]
    fn worked_relation() {
        let pi = BoundingBox::new(10.0, 10.0, 4.0, 4.0);
        let pj = BoundingBox::new(12.0, 13.0, 8.0, 2.0);
        let r = geometric_relation(&pi, &pj, 1e-3).0;
        let want = [0.25f64.ln(), 1.5f64.ln(), 0.5f64.ln(), 2f64.ln()];
        for k in 0..4 {
            assert!(close(r[k], want[k], 1e-15), "entry {k}: {} vs {}", r[k], want[k]);
        }
    }

    #[test]
    fn scaled_and_shifted_pair_keeps_relation() {
        let pi = BoundingBox::new(10.0, 10.0, 4.0, 4.0);
        let pj = BoundingBox::new(12.0, 13.0, 8.0, 2.0);
        let a = geometric_relation(&pi, &pj, 1e-3).0;
        let b = geometric_relation(
            &pi.scale_translate(3.0, 5.0, 7.0),
            &pj.scale_translate(3.0, 5.0, 7.0),
            1e-3,
        )
        .0;
        for k in 0..4 {
            assert!(close(a[k], b[k], 1e-12));
        }
    }

    #[test]
    fn spatial_embedding_layout() {
        let e = spatial_embed(&GeomRelation([0.0; 4]), 4, 1000.0).0;
        assert_eq!(e, [0.0, 1.0, 0.0, 1.0].repeat(4));
        assert_eq!(spatial_embed(&GeomRelation([0.0; 4]), 16, 1000.0).0.len(), 64);

        let e = spatial_embed(&GeomRelation([1.0, 0.0, 0.0, 0.0]), 4, 1000.0).0;
        assert_eq!(&e[..4], sinusoid_embed(1.0, 4, 1000.0).as_slice());
        assert_eq!(&e[4..], [0.0, 1.0, 0.0, 1.0].repeat(3).as_slice());
    }

    #[test]
    fn temporal_embedding_values() {
        let zero = temporal_embed(0, 6, 1000.0).0;
        assert_eq!(zero, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let e = temporal_embed(3, 8, 1000.0).0;
        assert!(close(e[0], 0.141_120_008_059_867_2, 1e-15));
        assert!(close(e[1], -0.989_992_496_600_445_4, 1e-15));
    }

    #[test]
    fn sign_of_tau_flips_only_sines() {
        let p = temporal_embed(1, 8, 1000.0).0;
        let m = temporal_embed(-1, 8, 1000.0).0;
        for z in 0..4 {
            assert_eq!(p[2 * z], -m[2 * z]);
            assert_eq!(p[2 * z + 1], m[2 * z + 1]);
        }
    }
}
