//! Bilinear elements on axis-aligned rectangles with a 2x2 Gauss rule.
//!
//! Local node order is counter-clockwise from the lower-left corner:
//! `(0,0), (1,0), (1,1), (0,1)` on the reference square `[0,1]^2`.
//! Quadrature points are ordered `(g0,g0), (g1,g0), (g0,g1), (g1,g1)`.

/// Gauss abscissae on `[0, 1]`.
pub const GAUSS: [f64; 2] = [
    0.5 - 0.288_675_134_594_812_9, // (1 - 1/sqrt 3) / 2
    0.5 + 0.288_675_134_594_812_9,
];

/// Weight of each point on the reference square.
pub const WEIGHT: f64 = 0.25;

/// Reference coordinates of quadrature point `q`.
pub fn point(q: usize) -> [f64; 2] {
    [GAUSS[q % 2], GAUSS[q / 2]]
}

/// Shape function values at reference point `x`.
pub fn shape(x: [f64; 2]) -> [f64; 4] {
    let [a, b] = x;
    [(1.0 - a) * (1.0 - b), a * (1.0 - b), a * b, (1.0 - a) * b]
}

/// Gradients on an element of size `dx * dy`.
pub fn gradients(x: [f64; 2], dx: f64, dy: f64) -> [[f64; 2]; 4] {
    let [a, b] = x;
    [
        [-(1.0 - b) / dx, -(1.0 - a) / dy],
        [(1.0 - b) / dx, -a / dy],
        [b / dx, a / dy],
        [-b / dx, (1.0 - a) / dy],
    ]
}

/// Offsets `(di, dj)` of the local nodes from the lower-left node.
pub const CORNERS: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];
