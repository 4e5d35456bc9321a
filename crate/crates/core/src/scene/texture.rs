//! Seeded multi-octave value noise.

use nalgebra::Vector3;

#[inline]
fn hash(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [x, y, z] {
        h ^= v as u64;
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
        h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 29;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Trilinearly interpolated lattice noise in `[0, 1]`.
fn value_noise(seed: u64, p: &Vector3<f64>) -> f64 {
    let base = p.map(f64::floor);
    let f = (p - base).map(smooth);
    let (x, y, z) = (base.x as i64, base.y as i64, base.z as i64);
    let c = |dx, dy, dz| hash(seed, x + dx, y + dy, z + dz);
    let x00 = lerp(c(0, 0, 0), c(1, 0, 0), f.x);
    let x10 = lerp(c(0, 1, 0), c(1, 1, 0), f.x);
    let x01 = lerp(c(0, 0, 1), c(1, 0, 1), f.x);
    let x11 = lerp(c(0, 1, 1), c(1, 1, 1), f.x);
    lerp(lerp(x00, x10, f.y), lerp(x01, x11, f.y), f.z)
}

/// Sum of `octaves` noise layers, each at twice the frequency and half the
/// amplitude of the previous, normalized to `[0, 1]`.
pub fn fractal_noise(seed: u64, p: &Vector3<f64>, base_frequency: f64, octaves: usize) -> f64 {
    let mut total = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = base_frequency;
    for o in 0..octaves.max(1) {
        total += amp * value_noise(seed.wrapping_add(o as u64 * 7919), &(p * freq));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    total / norm
}

/// RGB albedo from three decorrelated noise channels.
pub fn noise_color(seed: u64, p: &Vector3<f64>, base_frequency: f64, octaves: usize) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let n = fractal_noise(
            seed.wrapping_add(1 + c as u64 * 104_729),
            p,
            base_frequency,
            octaves,
        );
        // stretch contrast around the mean of the fractal sum
        let v = (0.5 + 1.8 * (n - 0.5)).clamp(0.0, 1.0);
        *out = (v * 255.0).round() as u8;
    }
    rgb
}
