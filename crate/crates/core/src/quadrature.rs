//! Quadrature rules on triangles (barycentric points, weights summing to 1)
//! and on edges (parameter in [0, 1], weights summing to 1).

pub struct TriRule {
    pub points: &'static [[f64; 3]],
    pub weights: &'static [f64],
}

const A1: f64 = 0.445_948_490_915_964_886_32;
const B1: f64 = 1.0 - 2.0 * A1;
const W1: f64 = 0.223_381_589_678_011_465_70;
const A2: f64 = 0.091_576_213_509_770_743_460;
const B2: f64 = 1.0 - 2.0 * A2;
const W2: f64 = 0.109_951_743_655_321_867_64;

/// Six-point rule, exact for polynomials of degree 4.
pub const DUNAVANT4: TriRule = TriRule {
    points: &[
        [B1, A1, A1],
        [A1, B1, A1],
        [A1, A1, B1],
        [B2, A2, A2],
        [A2, B2, A2],
        [A2, A2, B2],
    ],
    weights: &[W1, W1, W1, W2, W2, W2],
};

pub const CENTROID: TriRule = TriRule {
    points: &[[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
    weights: &[1.0],
};

const G: f64 = 0.288_675_134_594_812_882_25; // 1 / (2 sqrt 3)

/// Two-point Gauss-Legendre on [0, 1], exact for cubics.
pub const GAUSS2: [(f64, f64); 2] = [(0.5 - G, 0.5), (0.5 + G, 0.5)];
