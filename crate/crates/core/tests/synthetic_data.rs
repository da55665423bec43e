use std::collections::VecDeque;

use bfloss::grid::BinaryMap;
use bfloss::synthgen::{export, generate, import, split, ShapeKind, SynthConfig, Texture};
use proptest::prelude::*;

/// Breadth-first labelling, independent of the generator's own counter.
fn components(m: &BinaryMap) -> usize {
    let s = m.shape();
    let mut label = vec![0usize; s.len()];
    let mut next = 0;
    for r0 in 0..s.height {
        for c0 in 0..s.width {
            if !m.get(r0, c0) || label[s.index(r0, c0)] != 0 {
                continue;
            }
            next += 1;
            let mut queue = VecDeque::from([(r0, c0)]);
            label[s.index(r0, c0)] = next;
            while let Some((r, c)) = queue.pop_front() {
                let neighbours = [
                    (r.wrapping_sub(1), c),
                    (r + 1, c),
                    (r, c.wrapping_sub(1)),
                    (r, c + 1),
                ];
                for (nr, nc) in neighbours {
                    if nr < s.height && nc < s.width && m.get(nr, nc) && label[s.index(nr, nc)] == 0 {
                        label[s.index(nr, nc)] = next;
                        queue.push_back((nr, nc));
                    }
                }
            }
        }
    }
    next
}

fn on_border(m: &BinaryMap) -> bool {
    let s = m.shape();
    (0..s.height).any(|r| (0..s.width).any(|c| {
        (r == 0 || c == 0 || r == s.height - 1 || c == s.width - 1) && m.get(r, c)
    }))
}

#[test]
fn every_mask_is_one_component_within_area_bounds() {
    let cfg = SynthConfig {
        count: 120,
        seed: 11,
        ..SynthConfig::default()
    };
    let px = (cfg.size * cfg.size) as f64;
    for s in generate(&cfg).unwrap() {
        assert_eq!(components(&s.mask), 1, "sample {}", s.index);
        let area = s.area() as f64;
        assert!(area >= cfg.min_area * px && area <= cfg.max_area * px, "sample {} area {area}", s.index);
        assert!(s.image.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(on_border(&s.mask), cfg.touches_edge(s.index), "sample {}", s.index);
    }
}

#[test]
fn full_edge_touch_fraction_puts_every_shape_on_the_border() {
    for kind in ShapeKind::ALL {
        let cfg = SynthConfig {
            count: 15,
            size: 32,
            shapes: vec![kind],
            edge_touch_fraction: 1.0,
            seed: 5,
            ..SynthConfig::default()
        };
        assert!(generate(&cfg).unwrap().iter().all(|s| on_border(&s.mask) && s.shape == kind));
    }
}

#[test]
fn foreground_is_brighter_than_background_without_noise() {
    let cfg = SynthConfig {
        count: 20,
        noise_std: 0.0,
        texture: Texture::None,
        ..SynthConfig::default()
    };
    for s in generate(&cfg).unwrap() {
        let (mut fg, mut bg) = (f64::INFINITY, f64::NEG_INFINITY);
        for (v, m) in s.image.values().iter().zip(s.mask.values()) {
            if *m == 1 {
                fg = fg.min(*v);
            } else {
                bg = bg.max(*v);
            }
        }
        assert!(fg > bg);
    }
}

#[test]
fn export_and_import_round_trip() {
    let cfg = SynthConfig {
        count: 6,
        size: 16,
        ..SynthConfig::default()
    };
    let samples = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export(&samples, dir.path()).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 7);
    assert!(dir.path().join("image_00005.pgm").exists());
    let back = import(dir.path()).unwrap();
    assert_eq!(back.len(), 6);
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.shape, b.shape);
        for (x, y) in a.image.values().iter().zip(b.image.values()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn split_is_an_ordered_partition(n in 1usize..200, f in 0.01f64..0.99) {
        let v: Vec<usize> = (0..n).collect();
        let (a, b) = split(&v, f).unwrap();
        prop_assert_eq!(a.len(), (n as f64 * f).floor() as usize);
        let joined: Vec<usize> = a.into_iter().chain(b).collect();
        prop_assert_eq!(joined, v);
    }
}
