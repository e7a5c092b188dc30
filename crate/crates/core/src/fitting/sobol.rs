//! Sobol low-discrepancy points (Joe–Kuo direction numbers) with an optional
//! seeded random digital shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BITS: usize = 32;

/// (degree s, coefficient a, initial m_1..m_s) for dimensions 2..=21.
const DIRECTIONS: [(u32, u32, &[u32]); 20] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

pub const MAX_DIMENSIONS: usize = DIRECTIONS.len() + 1;

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = DIRECTIONS[dim - 1];
    let s = s as usize;
    for k in 0..BITS {
        v[k] = if k < s {
            m[k] << (BITS - 1 - k)
        } else {
            let mut x = v[k - s] ^ (v[k - s] >> s);
            for i in 1..s {
                if (a >> (s - 1 - i)) & 1 == 1 {
                    x ^= v[k - i];
                }
            }
            x
        };
    }
    v
}

/// Gray-code Sobol generator. Dimensions beyond the built-in table are
/// filled from a seeded uniform stream.
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    shift: Vec<u32>,
    index: u32,
    extra: Option<(usize, ChaCha8Rng)>,
}

impl Sobol {
    pub fn new(dims: usize) -> Self {
        let sobol_dims = dims.min(MAX_DIMENSIONS);
        Self {
            directions: (0..sobol_dims).map(direction_numbers).collect(),
            state: vec![0; sobol_dims],
            shift: vec![0; sobol_dims],
            index: 0,
            extra: (dims > sobol_dims).then(|| (dims - sobol_dims, ChaCha8Rng::seed_from_u64(0))),
        }
    }

    /// Same sequence XOR-shifted by seeded random words.
    pub fn scrambled(dims: usize, seed: u64) -> Self {
        let mut s = Self::new(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        s.shift.iter_mut().for_each(|x| *x = rng.random());
        if let Some((n, _)) = s.extra {
            s.extra = Some((n, ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed)));
        }
        s
    }

    /// Next point in [0, 1)^dims. The first point is the (shifted) origin.
    pub fn next_point(&mut self) -> Vec<f64> {
        let scale = 1.0 / (1u64 << BITS) as f64;
        let mut out: Vec<f64> = self
            .state
            .iter()
            .zip(&self.shift)
            .map(|(x, s)| (x ^ s) as f64 * scale)
            .collect();
        if let Some((n, rng)) = &mut self.extra {
            out.extend((0..*n).map(|_| rng.random::<f64>()));
        }
        let c = self.index.trailing_ones() as usize;
        for (x, v) in self.state.iter_mut().zip(&self.directions) {
            *x ^= v[c.min(BITS - 1)];
        }
        self.index = self.index.wrapping_add(1);
        out
    }
}
