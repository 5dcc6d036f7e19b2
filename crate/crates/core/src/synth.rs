//! Parametric street-pattern generator used as a labelled stand-in corpus.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::artifact::sha256_hex;
use crate::error::{Error, Result};
use crate::osm::{CorpusManifest, PlaceClass, PlaceRecord};
use crate::raster::{stroke_polylines, PackedImages, RasterImage};

/// Street-pattern archetype of a generated image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    /// Orthogonal gridiron at a random rotation.
    Grid,
    /// Concentric rings crossed by spokes.
    Radial,
    /// Warped random-walk streets.
    Organic,
    /// A few long roads through open land.
    Rural,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Grid, Family::Radial, Family::Organic, Family::Rural];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Grid => "grid",
            Family::Radial => "radial",
            Family::Organic => "organic",
            Family::Rural => "rural",
        }
    }

    fn place_class(self) -> PlaceClass {
        match self {
            Family::Grid => PlaceClass::City,
            Family::Radial | Family::Organic => PlaceClass::Town,
            Family::Rural => PlaceClass::Village,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown family '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub manifest: CorpusManifest,
    pub images: PackedImages,
}

type Polyline = (Vec<(f64, f64)>, f64);

/// Generates `n` images of `size` pixels, cycling through the families so
/// each family's count is within one of the others. Image `i` depends only
/// on `(seed, i)`.
pub fn make_synthetic_corpus(n: usize, size: usize, seed: u64) -> Result<SyntheticCorpus> {
    if n < 4 {
        return Err(Error::Argument(format!("synthetic corpus needs at least 4 images, got {n}")));
    }
    if size < 16 {
        return Err(Error::Argument(format!("synthetic image size {size} is below 16")));
    }
    let mut places = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let family = Family::ALL[i % 4];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let id = format!("synth-{i:06}");
        let lat = rng.gen_range(-55.0..70.0);
        let lon = rng.gen_range(-180.0..180.0);
        let mut place = PlaceRecord::new(id.clone(), format!("{family} {i}"), family.place_class(), lat, lon)?;
        place.family = Some(family.to_string());
        places.push(place);
        images.push(render_family(&id, family, size, &mut rng));
    }
    let digest = sha256_hex(format!("synthetic n={n} size={size} seed={seed}").as_bytes());
    Ok(SyntheticCorpus {
        manifest: CorpusManifest::new(places, digest, 0)?,
        images: PackedImages::new(size, images)?,
    })
}

/// Renders one image of `family`. Geometry is laid out on a 64-unit frame
/// and scaled, so families look alike at every output size.
pub fn render_family(place_id: &str, family: Family, size: usize, rng: &mut ChaCha8Rng) -> RasterImage {
    let lines = match family {
        Family::Grid => grid(rng),
        Family::Radial => radial(rng),
        Family::Organic => organic(rng),
        Family::Rural => rural(rng),
    };
    let k = size as f64 / 64.0;
    let scaled: Vec<Polyline> = lines
        .into_iter()
        .map(|(pts, w)| (pts.into_iter().map(|(x, y)| (x * k, y * k)).collect(), w * k))
        .collect();
    stroke_polylines(place_id, size, 4, &scaled)
}

fn grid(rng: &mut ChaCha8Rng) -> Vec<Polyline> {
    let spacing: f64 = rng.gen_range(5.0..7.0);
    let theta: f64 = rng.gen_range(0.0..PI / 2.0);
    let (ox, oy) = (rng.gen_range(0.0..spacing), rng.gen_range(0.0..spacing));
    let width = rng.gen_range(1.0..1.6);
    let (c, s) = (theta.cos(), theta.sin());
    let rot = |u: f64, v: f64| (32.0 + u * c - v * s, 32.0 + u * s + v * c);
    let mut out = Vec::new();
    let reach = 48.0;
    let steps = (2.0 * reach / spacing).ceil() as i32;
    for j in -steps / 2 - 1..=steps / 2 + 1 {
        let u = j as f64 * spacing + ox;
        out.push((vec![rot(u, -reach), rot(u, reach)], width));
        let v = j as f64 * spacing + oy;
        out.push((vec![rot(-reach, v), rot(reach, v)], width));
    }
    out
}

fn radial(rng: &mut ChaCha8Rng) -> Vec<Polyline> {
    // the place node is the hub, and images are centred on the place
    let (cx, cy) = (32.0, 32.0);
    let gap = rng.gen_range(12.5..13.0);
    let spokes = 8;
    let phase = rng.gen_range(0.0..TAU);
    let width = rng.gen_range(1.3..1.5);
    let mut out = Vec::new();
    let mut r = gap;
    while r < 48.0 {
        // rings wobble a little so no two towns share exact ring geometry
        let wobble: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pts = (0..=64)
            .map(|t| {
                let a = TAU * t as f64 / 64.0;
                let rr = r + wobble[(t / 4) % 16];
                (cx + rr * a.cos(), cy + rr * a.sin())
            })
            .collect();
        out.push((pts, width));
        r += gap;
    }
    for s in 0..spokes {
        let a = phase + TAU * s as f64 / spokes as f64 + rng.gen_range(-0.2..0.2);
        out.push((vec![(cx, cy), (cx + 60.0 * a.cos(), cy + 60.0 * a.sin())], width));
    }
    out
}

fn organic(rng: &mut ChaCha8Rng) -> Vec<Polyline> {
    // one wandering street per cell of a jittered 4x4 lattice keeps the
    // texture even across the frame
    let width = rng.gen_range(1.0..1.4);
    let mut out = Vec::new();
    for cell in 0..48 {
        let cell = cell % 16;
        let (cx, cy) = ((cell % 4) as f64 * 16.0 + 8.0, (cell / 4) as f64 * 16.0 + 8.0);
        let mut p = (cx + rng.gen_range(-5.0..5.0), cy + rng.gen_range(-5.0..5.0));
        let mut heading = rng.gen_range(0.0..TAU);
        let mut pts = vec![p];
        for _ in 0..rng.gen_range(10..14) {
            heading += rng.gen_range(-0.7..0.7);
            p = (p.0 + 2.0 * heading.cos(), p.1 + 2.0 * heading.sin());
            pts.push(p);
        }
        out.push((pts, width));
    }
    out
}

fn rural(rng: &mut ChaCha8Rng) -> Vec<Polyline> {
    let roads = rng.gen_range(2..6);
    let width = rng.gen_range(1.0..1.4);
    let mut out = Vec::new();
    for _ in 0..roads {
        let a: f64 = rng.gen_range(0.0..PI);
        let off = rng.gen_range(-14.0..14.0);
        let bend = rng.gen_range(-6.0..6.0);
        let (dx, dy) = (a.cos(), a.sin());
        let pts = (0..=8)
            .map(|t| {
                let u = -48.0 + 12.0 * t as f64;
                let v = off + bend * (1.0 - (u / 48.0).powi(2));
                (32.0 + u * dx - v * dy, 32.0 + u * dy + v * dx)
            })
            .collect();
        out.push((pts, width));
    }
    out
}
