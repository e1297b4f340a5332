//! Procedural digit-like glyphs for the synthetic decoy task: a 3x5 bitmap
//! font upscaled into a jittered box, with intensity noise.

use rand::Rng;

/// 3-wide, 5-tall bitmaps, row-major, one per class.
const FONT: [[u8; 15]; 10] = [
    [1, 1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1], // 0
    [0, 1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 1], // 1
    [1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1], // 2
    [1, 1, 1, 0, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1], // 3
    [1, 0, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 0, 0, 1], // 4
    [1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 1], // 5
    [1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1], // 6
    [1, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0, 1, 0], // 7
    [1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1], // 8
    [1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1], // 9
];

pub(crate) const FONT_COLS: usize = 3;
pub(crate) const FONT_ROWS: usize = 5;

/// Renders a glyph for `class` into the square image, confined to the box
/// [box_lo, box_hi) in both axes. Returns the glyph's bounding box
/// (row_lo, row_hi, col_lo, col_hi), exclusive on the hi side.
pub(crate) fn render_glyph<R: Rng + ?Sized>(
    img: &mut [f64],
    side: usize,
    class: usize,
    box_lo: usize,
    box_hi: usize,
    rng: &mut R,
) -> (usize, usize, usize, usize) {
    debug_assert!(class < 10);
    let box_h = box_hi - box_lo;
    let box_w = box_hi - box_lo;
    let scale = (box_h / FONT_ROWS).min(box_w / FONT_COLS).max(1);
    let glyph_h = FONT_ROWS * scale;
    let glyph_w = FONT_COLS * scale;
    let slack_r = box_h.saturating_sub(glyph_h);
    let slack_c = box_w.saturating_sub(glyph_w);
    let off_r = box_lo + rng.gen_range(0..=slack_r);
    let off_c = box_lo + rng.gen_range(0..=slack_c);
    let intensity = rng.gen_range(0.65..1.0);
    for fr in 0..FONT_ROWS {
        for fc in 0..FONT_COLS {
            if FONT[class][fr * FONT_COLS + fc] == 0 {
                continue;
            }
            for dr in 0..scale {
                for dc in 0..scale {
                    let r = off_r + fr * scale + dr;
                    let c = off_c + fc * scale + dc;
                    let noise: f64 = rng.gen_range(-0.08..0.08);
                    img[r * side + c] = (intensity + noise).clamp(0.0, 1.0);
                }
            }
        }
    }
    (off_r, off_r + glyph_h, off_c, off_c + glyph_w)
}
