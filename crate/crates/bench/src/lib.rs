//! Deterministic inputs shared by the benchmarks.

use drumscribe_core::datafactory::render::render_toy;
use drumscribe_core::datafactory::{generate_song, GmMap, ToyStyle};
use drumscribe_core::{ActivationMatrix, AudioBuffer};

/// Mix of the first toy song, cut to `seconds`.
pub fn toy_mix(seconds: f64) -> AudioBuffer {
    let song = generate_song(0, &ToyStyle::default(), 0);
    let (_, mix) = render_toy(&song, &GmMap::default(), 0, seconds, 0);
    mix
}

/// Smooth pseudo-random activations with sparse spikes.
pub fn activations(n_frames: usize, n_classes: usize) -> ActivationMatrix {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let values = (0..n_frames * n_classes)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let u = (state >> 11) as f32 / (1u64 << 53) as f32;
            if u > 0.97 { u } else { u * 0.1 }
        })
        .collect();
    ActivationMatrix::new(n_frames, n_classes, 100.0, values).expect("consistent shape")
}
