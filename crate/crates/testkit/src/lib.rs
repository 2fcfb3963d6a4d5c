//! Synthetic cell-image fixtures.
//!
//! Generates PNG datasets shaped like the public segmented blood-smear
//! tree (`root/Parasitized/*.png`, `root/Uninfected/*.png`): a stained cell
//! blob on a black background, with parasitized cells carrying one or two
//! dark chromatin-like dots inside the cell body. The images are
//! procedurally varied (size, position, tint, noise) so a classifier has to
//! learn the dot feature rather than a constant.

use std::io;
use std::path::Path;

use image::{Rgb, RgbImage};

/// splitmix64; deterministic fixtures from a single seed.
struct Rng(u64);

impl Rng {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.unit() * (hi - lo)
    }
}

/// Render one synthetic cell. `parasitized` adds 1-2 dark dots inside the
/// cell body.
pub fn cell_image(seed: u64, parasitized: bool) -> RgbImage {
    let mut rng = Rng(seed);
    let size = rng.range(48.0, 96.0) as u32;
    let mut img = RgbImage::from_pixel(size, size, Rgb([0, 0, 0]));

    let s = size as f64;
    let cx = s / 2.0 + rng.range(-0.06, 0.06) * s;
    let cy = s / 2.0 + rng.range(-0.06, 0.06) * s;
    let rx = rng.range(0.32, 0.42) * s;
    let ry = rx * rng.range(0.85, 1.0);

    // Stained-cell tint, varied per image.
    let base = [
        rng.range(195.0, 235.0),
        rng.range(140.0, 175.0),
        rng.range(150.0, 190.0),
    ];

    let dots: Vec<(f64, f64, f64)> = if parasitized {
        let count = 1 + (rng.next_u64() % 2) as usize;
        (0..count)
            .map(|_| {
                // Keep the dot well inside the cell body.
                let ang = rng.range(0.0, std::f64::consts::TAU);
                let dist = rng.range(0.0, 0.55);
                (
                    cx + ang.cos() * dist * rx,
                    cy + ang.sin() * dist * ry,
                    rng.range(0.10, 0.18) * s,
                )
            })
            .collect()
    } else {
        Vec::new()
    };

    for y in 0..size {
        for x in 0..size {
            let dx = (x as f64 - cx) / rx;
            let dy = (y as f64 - cy) / ry;
            let d2 = dx * dx + dy * dy;
            if d2 > 1.0 {
                continue; // black background outside the cell
            }
            // Slightly darker toward the rim, plus per-pixel noise.
            let shade = 1.0 - 0.15 * d2;
            let noise = rng.range(-6.0, 6.0);
            let mut px = [0u8; 3];
            for c in 0..3 {
                px[c] = (base[c] * shade + noise).clamp(0.0, 255.0) as u8;
            }
            // Parasite dots: dark purple chromatin blobs.
            for &(dot_x, dot_y, dot_r) in &dots {
                let ddx = x as f64 - dot_x;
                let ddy = y as f64 - dot_y;
                if ddx * ddx + ddy * ddy < dot_r * dot_r {
                    px = [
                        (90.0 + noise).clamp(0.0, 255.0) as u8,
                        (35.0 + noise).clamp(0.0, 255.0) as u8,
                        (110.0 + noise).clamp(0.0, 255.0) as u8,
                    ];
                }
            }
            img.put_pixel(x, y, Rgb(px));
        }
    }
    img
}

/// Write a balanced dataset of `per_class` images per class under `root`,
/// creating `Parasitized/` and `Uninfected/` subdirectories.
pub fn write_dataset(root: &Path, per_class: usize, seed: u64) -> io::Result<()> {
    let para = root.join("Parasitized");
    let unin = root.join("Uninfected");
    std::fs::create_dir_all(&para)?;
    std::fs::create_dir_all(&unin)?;
    for i in 0..per_class {
        let p = cell_image(seed ^ (i as u64) << 1, true);
        p.save(para.join(format!("cell_{i:05}.png")))
            .map_err(io::Error::other)?;
        let u = cell_image(seed ^ ((i as u64) << 1 | 1), false);
        u.save(unin.join(format!("cell_{i:05}.png")))
            .map_err(io::Error::other)?;
    }
    Ok(())
}
