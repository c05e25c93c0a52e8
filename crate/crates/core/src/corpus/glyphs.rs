//! Embedded stroke font for the synthetic corpus.
//!
//! Every alphabet character is a set of polylines on an abstract grid with
//! y pointing down: cap top at y=0, baseline at y=14, descenders to y=19,
//! lowercase x-height starting at y=4. Strokes are rendered with round caps,
//! so glyph ink extent is the polyline extent padded by the stroke radius.

pub type Stroke = &'static [(f32, f32)];

/// Strokes and advance width (in glyph units) for one character.
/// Only alphabet characters are defined.
pub fn glyph(c: char) -> Option<(&'static [Stroke], f32)> {
    let def: (&[Stroke], f32) = match c {
        'A' => (&[&[(0., 14.), (4., 0.), (8., 14.)], &[(1.7, 9.), (6.3, 9.)]], 8.),
        'B' => (
            &[
                &[(0., 0.), (0., 14.)],
                &[(0., 0.), (5., 0.), (7., 2.), (7., 5.), (5., 7.), (0., 7.)],
                &[(0., 7.), (6., 7.), (8., 9.), (8., 12.), (6., 14.), (0., 14.)],
            ],
            8.,
        ),
        'C' => (
            &[&[(8., 2.5), (6., 0.), (2., 0.), (0., 2.5), (0., 11.5), (2., 14.), (6., 14.), (8., 11.5)]],
            8.,
        ),
        'D' => (
            &[
                &[(0., 0.), (0., 14.)],
                &[(0., 0.), (5., 0.), (8., 3.), (8., 11.), (5., 14.), (0., 14.)],
            ],
            8.,
        ),
        'E' => (&[&[(8., 0.), (0., 0.), (0., 14.), (8., 14.)], &[(0., 7.), (6., 7.)]], 8.),
        'F' => (&[&[(8., 0.), (0., 0.), (0., 14.)], &[(0., 7.), (6., 7.)]], 8.),
        'G' => (
            &[&[
                (8., 2.5),
                (6., 0.),
                (2., 0.),
                (0., 2.5),
                (0., 11.5),
                (2., 14.),
                (6., 14.),
                (8., 11.5),
                (8., 8.),
                (4.5, 8.),
            ]],
            8.,
        ),
        'H' => (&[&[(0., 0.), (0., 14.)], &[(8., 0.), (8., 14.)], &[(0., 7.), (8., 7.)]], 8.),
        'I' => (&[&[(1., 0.), (7., 0.)], &[(4., 0.), (4., 14.)], &[(1., 14.), (7., 14.)]], 8.),
        'J' => (&[&[(8., 0.), (8., 11.), (6., 14.), (2., 14.), (0., 11.5)]], 8.),
        'K' => (&[&[(0., 0.), (0., 14.)], &[(8., 0.), (0., 8.)], &[(2.6, 5.8), (8., 14.)]], 8.),
        'L' => (&[&[(0., 0.), (0., 14.), (8., 14.)]], 8.),
        'M' => (&[&[(0., 14.), (0., 0.), (4., 8.5), (8., 0.), (8., 14.)]], 8.),
        'N' => (&[&[(0., 14.), (0., 0.), (8., 14.), (8., 0.)]], 8.),
        'O' => (
            &[&[
                (2., 0.),
                (6., 0.),
                (8., 2.5),
                (8., 11.5),
                (6., 14.),
                (2., 14.),
                (0., 11.5),
                (0., 2.5),
                (2., 0.),
            ]],
            8.,
        ),
        'P' => (
            &[&[(0., 14.), (0., 0.), (6., 0.), (8., 2.), (8., 5.5), (6., 7.5), (0., 7.5)]],
            8.,
        ),
        'Q' => (
            &[
                &[
                    (2., 0.),
                    (6., 0.),
                    (8., 2.5),
                    (8., 11.5),
                    (6., 14.),
                    (2., 14.),
                    (0., 11.5),
                    (0., 2.5),
                    (2., 0.),
                ],
                &[(5., 10.), (9., 15.)],
            ],
            9.,
        ),
        'R' => (
            &[
                &[(0., 14.), (0., 0.), (6., 0.), (8., 2.), (8., 5.5), (6., 7.5), (0., 7.5)],
                &[(3., 7.5), (8., 14.)],
            ],
            8.,
        ),
        'S' => (
            &[&[
                (8., 2.2),
                (6., 0.),
                (2., 0.),
                (0., 2.2),
                (0., 4.8),
                (2., 7.),
                (6., 7.),
                (8., 9.2),
                (8., 11.8),
                (6., 14.),
                (2., 14.),
                (0., 11.8),
            ]],
            8.,
        ),
        'T' => (&[&[(0., 0.), (8., 0.)], &[(4., 0.), (4., 14.)]], 8.),
        'U' => (&[&[(0., 0.), (0., 11.5), (2., 14.), (6., 14.), (8., 11.5), (8., 0.)]], 8.),
        'V' => (&[&[(0., 0.), (4., 14.), (8., 0.)]], 8.),
        'W' => (&[&[(0., 0.), (2., 14.), (4., 5.5), (6., 14.), (8., 0.)]], 8.),
        'X' => (&[&[(0., 0.), (8., 14.)], &[(8., 0.), (0., 14.)]], 8.),
        'Y' => (&[&[(0., 0.), (4., 6.5)], &[(8., 0.), (4., 6.5), (4., 14.)]], 8.),
        'Z' => (&[&[(0., 0.), (8., 0.), (0., 14.), (8., 14.)]], 8.),

        'a' => (
            &[
                &[(7., 6.), (5., 4.), (2., 4.), (0., 6.), (0., 12.), (2., 14.), (5., 14.), (7., 12.)],
                &[(7., 4.), (7., 14.)],
            ],
            7.,
        ),
        'b' => (
            &[
                &[(0., 0.), (0., 14.)],
                &[(0., 6.), (2., 4.), (5., 4.), (7., 6.), (7., 12.), (5., 14.), (2., 14.), (0., 12.)],
            ],
            7.,
        ),
        'c' => (&[&[(7., 6.), (5., 4.), (2., 4.), (0., 6.), (0., 12.), (2., 14.), (5., 14.), (7., 12.)]], 7.),
        'd' => (
            &[
                &[(7., 0.), (7., 14.)],
                &[(7., 6.), (5., 4.), (2., 4.), (0., 6.), (0., 12.), (2., 14.), (5., 14.), (7., 12.)],
            ],
            7.,
        ),
        'e' => (
            &[&[(0., 9.), (7., 9.), (7., 6.), (5., 4.), (2., 4.), (0., 6.), (0., 12.), (2., 14.), (6.3, 14.)]],
            7.,
        ),
        'f' => (&[&[(5.5, 1.5), (4., 0.), (2.5, 1.5), (2.5, 14.)], &[(0.5, 5.), (5., 5.)]], 6.),
        'g' => (
            &[
                &[(7., 6.), (5., 4.), (2., 4.), (0., 6.), (0., 11.), (2., 13.), (5., 13.), (7., 11.)],
                &[(7., 4.), (7., 16.5), (5., 19.), (1.5, 19.), (0., 17.5)],
            ],
            7.,
        ),
        'h' => (&[&[(0., 0.), (0., 14.)], &[(0., 6.), (2., 4.), (5., 4.), (7., 6.), (7., 14.)]], 7.),
        'i' => (&[&[(1.5, 0.8), (1.5, 1.2)], &[(1.5, 4.), (1.5, 14.)]], 3.),
        'j' => (&[&[(3., 0.8), (3., 1.2)], &[(3., 4.), (3., 16.5), (1.5, 19.), (0., 18.)]], 4.),
        'k' => (&[&[(0., 0.), (0., 14.)], &[(6., 4.), (0., 9.5)], &[(2.2, 7.6), (6.5, 14.)]], 7.),
        'l' => (&[&[(1.5, 0.), (1.5, 14.)]], 3.),
        'm' => (
            &[
                &[(0., 4.), (0., 14.)],
                &[(0., 6.), (1.2, 4.), (3.2, 4.), (4.2, 6.), (4.2, 14.)],
                &[(4.2, 6.), (5.4, 4.), (7.4, 4.), (8.4, 6.), (8.4, 14.)],
            ],
            8.4,
        ),
        'n' => (&[&[(0., 4.), (0., 14.)], &[(0., 6.), (2., 4.), (5., 4.), (7., 6.), (7., 14.)]], 7.),
        'o' => (
            &[&[(2., 4.), (5., 4.), (7., 6.), (7., 12.), (5., 14.), (2., 14.), (0., 12.), (0., 6.), (2., 4.)]],
            7.,
        ),
        'p' => (
            &[
                &[(0., 4.), (0., 19.)],
                &[(0., 6.), (2., 4.), (5., 4.), (7., 6.), (7., 12.), (5., 14.), (2., 14.), (0., 12.)],
            ],
            7.,
        ),
        'q' => (
            &[
                &[(7., 4.), (7., 19.)],
                &[(7., 6.), (5., 4.), (2., 4.), (0., 6.), (0., 12.), (2., 14.), (5., 14.), (7., 12.)],
            ],
            7.,
        ),
        'r' => (&[&[(0., 4.), (0., 14.)], &[(0., 6.5), (2., 4.), (4.5, 4.), (5.5, 5.2)]], 6.),
        's' => (
            &[&[
                (6., 5.4),
                (4.3, 4.),
                (1.7, 4.),
                (0., 5.6),
                (0., 7.),
                (1.7, 8.6),
                (4.3, 8.6),
                (6., 10.2),
                (6., 12.2),
                (4.3, 14.),
                (1.7, 14.),
                (0., 12.4),
            ]],
            6.,
        ),
        't' => (&[&[(2., 0.5), (2., 12.), (3.8, 14.), (5.8, 13.2)], &[(0., 4.), (5., 4.)]], 6.),
        'u' => (&[&[(0., 4.), (0., 12.), (2., 14.), (5., 14.), (7., 12.)], &[(7., 4.), (7., 14.)]], 7.),
        'v' => (&[&[(0., 4.), (3.5, 14.), (7., 4.)]], 7.),
        'w' => (&[&[(0., 4.), (1.8, 14.), (3.6, 7.5), (5.4, 14.), (7.2, 4.)]], 7.2),
        'x' => (&[&[(0., 4.), (7., 14.)], &[(7., 4.), (0., 14.)]], 7.),
        'y' => (&[&[(0., 4.), (3.5, 13.2)], &[(7., 4.), (1.7, 19.)]], 7.),
        'z' => (&[&[(0., 4.), (7., 4.), (0., 14.), (7., 14.)]], 7.),

        '0' => (
            &[
                &[
                    (2., 0.),
                    (6., 0.),
                    (8., 2.5),
                    (8., 11.5),
                    (6., 14.),
                    (2., 14.),
                    (0., 11.5),
                    (0., 2.5),
                    (2., 0.),
                ],
                &[(2., 11.), (6., 3.)],
            ],
            8.,
        ),
        '1' => (&[&[(1., 3.), (4., 0.), (4., 14.)], &[(1., 14.), (7., 14.)]], 8.),
        '2' => (&[&[(0., 2.2), (2., 0.), (6., 0.), (8., 2.2), (8., 5.), (0., 14.), (8., 14.)]], 8.),
        '3' => (
            &[
                &[(0., 2.), (2., 0.), (6., 0.), (8., 2.), (8., 5.), (6., 7.), (3., 7.)],
                &[(6., 7.), (8., 9.), (8., 12.), (6., 14.), (2., 14.), (0., 12.)],
            ],
            8.,
        ),
        '4' => (&[&[(6., 14.), (6., 0.), (0., 10.), (8., 10.)]], 8.),
        '5' => (
            &[&[(8., 0.), (0., 0.), (0., 6.), (5., 6.), (8., 8.5), (8., 11.5), (5.5, 14.), (2., 14.), (0., 12.)]],
            8.,
        ),
        '6' => (
            &[&[
                (7., 1.8),
                (5., 0.),
                (2.5, 0.),
                (0., 2.8),
                (0., 11.5),
                (2., 14.),
                (6., 14.),
                (8., 11.5),
                (8., 9.),
                (6., 7.),
                (2., 7.),
                (0., 9.),
            ]],
            8.,
        ),
        '7' => (&[&[(0., 0.), (8., 0.), (3., 14.)]], 8.),
        '8' => (
            &[
                &[(2., 0.), (6., 0.), (8., 2.), (8., 5.), (6., 7.), (2., 7.), (0., 5.), (0., 2.), (2., 0.)],
                &[(2., 7.), (6., 7.), (8., 9.), (8., 12.), (6., 14.), (2., 14.), (0., 12.), (0., 9.), (2., 7.)],
            ],
            8.,
        ),
        '9' => (
            &[&[
                (1., 12.2),
                (3., 14.),
                (5.5, 14.),
                (8., 11.2),
                (8., 2.5),
                (6., 0.),
                (2., 0.),
                (0., 2.5),
                (0., 5.),
                (2., 7.),
                (6., 7.),
                (8., 5.),
            ]],
            8.,
        ),
        _ => return None,
    };
    Some(def)
}

/// Baseline sits at this y in glyph units.
pub const BASELINE_Y: f32 = 14.0;
/// Descenders extend to this y.
#[cfg(test)]
pub const DESCENDER_Y: f32 = 19.0;
/// Default stroke radius in glyph units.
pub const STROKE_RADIUS: f32 = 1.15;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet;

    #[test]
    fn every_alphabet_char_has_a_glyph() {
        for i in 0..alphabet::ALPHABET_SIZE {
            let c = alphabet::index_char(i).unwrap();
            let (strokes, adv) = glyph(c).unwrap_or_else(|| panic!("missing glyph {c:?}"));
            assert!(adv > 0.0);
            assert!(!strokes.is_empty());
            for s in strokes {
                assert!(!s.is_empty());
                for &(x, y) in s.iter() {
                    assert!((-1.0..=10.0).contains(&x), "{c:?} x={x}");
                    assert!((-1.0..=DESCENDER_Y + 0.5).contains(&y), "{c:?} y={y}");
                }
            }
        }
        assert!(glyph('-').is_none());
    }
}
