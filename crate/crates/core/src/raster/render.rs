use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::image::RasterImage;
use super::mercator::{mercator_project, mercator_unproject};
use crate::error::{Error, Result};
use crate::osm::{PlaceRecord, RoadClass, RoadSegment};

pub const DEFAULT_MIN_SET_FRACTION: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    /// Stroke width per class, in output pixels.
    pub stroke_width_px: BTreeMap<RoadClass, u32>,
    pub zoom: u8,
    /// Render at `size * supersample`, then box-filter down.
    pub supersample: u32,
}

impl Default for RenderStyle {
    fn default() -> Self {
        use RoadClass::*;
        Self {
            stroke_width_px: BTreeMap::from([
                (Motorway, 5),
                (Primary, 4),
                (Secondary, 3),
                (Tertiary, 2),
                (Residential, 1),
                (Rail, 2),
                (Tunnel, 2),
                (Other, 1),
            ]),
            zoom: 15,
            supersample: 4,
        }
    }
}

impl RenderStyle {
    pub fn validate(&self) -> Result<()> {
        for class in RoadClass::ALL {
            match self.stroke_width_px.get(&class) {
                Some(&w) if w >= 1 => {}
                _ => {
                    return Err(Error::Config(format!(
                        "road class {class:?} needs a stroke width of at least 1"
                    )))
                }
            }
        }
        if !(10..=18).contains(&self.zoom) {
            return Err(Error::Config(format!("zoom {} outside [10, 18]", self.zoom)));
        }
        if self.supersample < 1 {
            return Err(Error::Config("supersample must be at least 1".into()));
        }
        Ok(())
    }

    pub fn width(&self, class: RoadClass) -> u32 {
        self.stroke_width_px.get(&class).copied().unwrap_or(1)
    }

    fn max_width(&self) -> u32 {
        self.stroke_width_px.values().copied().max().unwrap_or(1)
    }
}

/// Strokes polylines given in supersampled-grid pixel coordinates onto a
/// `grid x grid` byte canvas. A pixel is set when its centre lies within
/// `radius` of a segment, which gives round caps and joins.
fn stroke_capsule(canvas: &mut [u8], grid: usize, a: (f64, f64), b: (f64, f64), radius: f64) {
    let min_x = (a.0.min(b.0) - radius - 0.5).floor().max(0.0);
    let max_x = (a.0.max(b.0) + radius - 0.5).ceil().min(grid as f64 - 1.0);
    let min_y = (a.1.min(b.1) - radius - 0.5).floor().max(0.0);
    let max_y = (a.1.max(b.1) + radius - 0.5).ceil().min(grid as f64 - 1.0);
    if min_x > max_x || min_y > max_y {
        return;
    }
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let r2 = radius * radius;
    for py in min_y as usize..=max_y as usize {
        let cy = py as f64 + 0.5;
        let row = &mut canvas[py * grid..(py + 1) * grid];
        for (px, cell) in row
            .iter_mut()
            .enumerate()
            .take(max_x as usize + 1)
            .skip(min_x as usize)
        {
            if *cell != 0 {
                continue;
            }
            let cx = px as f64 + 0.5;
            let t = if len2 > 0.0 {
                (((cx - a.0) * dx + (cy - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (ex, ey) = (a.0 + t * dx - cx, a.1 + t * dy - cy);
            if ex * ex + ey * ey <= r2 {
                *cell = 1;
            }
        }
    }
}

/// Strokes pixel-space polylines (`(x, y)` in output pixels, each with a
/// width in output pixels) at `supersample` and box-filters to `size`.
pub fn stroke_polylines(
    place_id: &str,
    size: usize,
    supersample: usize,
    polylines: &[(Vec<(f64, f64)>, f64)],
) -> RasterImage {
    let ss = supersample as f64;
    let grid = size * supersample;
    let mut canvas = vec![0u8; grid * grid];
    for (line, width) in polylines {
        let radius = width * ss / 2.0;
        let pts: Vec<(f64, f64)> = line.iter().map(|&(x, y)| (x * ss, y * ss)).collect();
        for w in pts.windows(2) {
            stroke_capsule(&mut canvas, grid, w[0], w[1], radius);
        }
        if pts.len() == 1 {
            stroke_capsule(&mut canvas, grid, pts[0], pts[0], radius);
        }
    }
    box_downsample(place_id, &canvas, grid, supersample)
}

fn box_downsample(place_id: &str, canvas: &[u8], grid: usize, factor: usize) -> RasterImage {
    let size = grid / factor;
    let mut out = RasterImage::blank(place_id, size);
    let threshold = factor * factor; // compare 2 * count >= factor^2
    for oy in 0..size {
        for ox in 0..size {
            let mut count = 0;
            for sy in oy * factor..(oy + 1) * factor {
                count += canvas[sy * grid + ox * factor..sy * grid + (ox + 1) * factor]
                    .iter()
                    .filter(|&&c| c != 0)
                    .count();
            }
            if 2 * count >= threshold {
                out.set(ox, oy, true);
            }
        }
    }
    out
}

/// Renders the roads around `center` into an `out_size` square image.
///
/// The window spans `out_size * supersample` world pixels at `style.zoom`,
/// and the place projects onto the centre of output pixel
/// `(out_size / 2, out_size / 2)`.
pub fn render_place<'a, I>(
    center: &PlaceRecord,
    roads: I,
    style: &RenderStyle,
    out_size: usize,
) -> Result<RasterImage>
where
    I: IntoIterator<Item = &'a RoadSegment>,
{
    style.validate()?;
    let ss = style.supersample as usize;
    if out_size == 0 || out_size * ss < 64 {
        return Err(Error::Argument(format!(
            "render grid {out_size}x{ss} is below the 64 pixel minimum"
        )));
    }
    let (cx, cy) = mercator_project(center.lat, center.lon, style.zoom);
    let grid = (out_size * ss) as f64;
    let half_cell = ss as f64 / 2.0;
    // world pixel -> supersampled grid pixel -> output pixel units
    let to_local = |lat: f64, lon: f64| {
        let (x, y) = mercator_project(lat, lon, style.zoom);
        (
            (x - cx + grid / 2.0 + half_cell) / ss as f64,
            (y - cy + grid / 2.0 + half_cell) / ss as f64,
        )
    };
    let polylines: Vec<(Vec<(f64, f64)>, f64)> = roads
        .into_iter()
        .map(|r| {
            let pts = r.polyline.iter().map(|&(lat, lon)| to_local(lat, lon)).collect();
            (pts, style.width(r.road_class) as f64)
        })
        .collect();
    Ok(stroke_polylines(&center.place_id, out_size, ss, &polylines))
}

/// Lat/lon box `(min_lat, min_lon, max_lat, max_lon)` covering a place's
/// render window plus the widest stroke.
pub fn viewport_bounds(center: &PlaceRecord, style: &RenderStyle, out_size: usize) -> (f64, f64, f64, f64) {
    let (cx, cy) = mercator_project(center.lat, center.lon, style.zoom);
    let ss = style.supersample as f64;
    let half = (out_size as f64 * ss) / 2.0 + (style.max_width() as f64 + 2.0) * ss;
    let (north, west) = mercator_unproject(cx - half, cy - half, style.zoom);
    let (south, east) = mercator_unproject(cx + half, cy + half, style.zoom);
    (south, west, north, east)
}

pub fn is_effectively_empty(img: &RasterImage, min_set_fraction: f64) -> bool {
    img.set_fraction() < min_set_fraction
}

/// Uniform lat/lon bucket grid over road segments. Read-only after
/// construction, so it can be shared across rendering threads.
#[derive(Debug)]
pub struct RoadIndex {
    roads: Vec<RoadSegment>,
    cell_deg: f64,
    buckets: BTreeMap<(i64, i64), Vec<u32>>,
}

impl RoadIndex {
    pub fn new(roads: Vec<RoadSegment>, cell_deg: f64) -> Self {
        assert!(cell_deg > 0.0);
        let mut buckets: BTreeMap<(i64, i64), Vec<u32>> = BTreeMap::new();
        for (i, r) in roads.iter().enumerate() {
            let (a, b, c, d) = r.bounds();
            let (r0, c0) = Self::cell(a, b, cell_deg);
            let (r1, c1) = Self::cell(c, d, cell_deg);
            for row in r0..=r1 {
                for col in c0..=c1 {
                    buckets.entry((row, col)).or_default().push(i as u32);
                }
            }
        }
        Self {
            roads,
            cell_deg,
            buckets,
        }
    }

    fn cell(lat: f64, lon: f64, cell: f64) -> (i64, i64) {
        ((lat / cell).floor() as i64, (lon / cell).floor() as i64)
    }

    pub fn roads(&self) -> &[RoadSegment] {
        &self.roads
    }

    /// Segments whose bounding box meets the query box, in input order.
    pub fn query(&self, min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Vec<&RoadSegment> {
        let (r0, c0) = Self::cell(min_lat, min_lon, self.cell_deg);
        let (r1, c1) = Self::cell(max_lat, max_lon, self.cell_deg);
        let mut hits: Vec<u32> = Vec::new();
        for row in r0..=r1 {
            for (_, ids) in self.buckets.range((row, c0)..=(row, c1)) {
                hits.extend_from_slice(ids);
            }
        }
        hits.sort_unstable();
        hits.dedup();
        hits.into_iter()
            .map(|i| &self.roads[i as usize])
            .filter(|r| {
                let (a, b, c, d) = r.bounds();
                a <= max_lat && c >= min_lat && b <= max_lon && d >= min_lon
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RasterizeOutcome {
    pub images: Vec<RasterImage>,
    /// Places whose render fell below the minimum set fraction.
    pub dropped_empty: Vec<String>,
}

/// Renders every place on `threads` worker threads. Output order follows
/// `places` regardless of the thread count.
pub fn rasterize_places(
    places: &[PlaceRecord],
    index: &RoadIndex,
    style: &RenderStyle,
    out_size: usize,
    min_set_fraction: f64,
    threads: usize,
) -> Result<RasterizeOutcome> {
    if !(0.0..1.0).contains(&min_set_fraction) {
        return Err(Error::Argument(format!(
            "min_set_fraction {min_set_fraction} outside [0, 1)"
        )));
    }
    style.validate()?;
    let threads = threads.max(1);
    let chunk = places.len().div_ceil(threads).max(1);
    let rendered: Vec<Result<Vec<RasterImage>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = places
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|p| {
                            let (a, b, c, d) = viewport_bounds(p, style, out_size);
                            render_place(p, index.query(a, b, c, d), style, out_size)
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("render thread panicked"))
            .collect()
    });
    let mut outcome = RasterizeOutcome::default();
    for part in rendered {
        for img in part? {
            if is_effectively_empty(&img, min_set_fraction) {
                outcome.dropped_empty.push(img.place_id.clone());
            } else {
                outcome.images.push(img);
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::osm::PlaceClass;

    fn place(lat: f64, lon: f64) -> PlaceRecord {
        PlaceRecord::new("p", "", PlaceClass::Town, lat, lon).unwrap()
    }

    fn unit_style(ss: u32) -> RenderStyle {
        let mut s = RenderStyle::default();
        s.stroke_width_px.values_mut().for_each(|w| *w = 1);
        s.supersample = ss;
        s
    }

    #[test]
    fn no_roads_blank() {
        let img = render_place(&place(48.0, 11.0), [], &RenderStyle::default(), 64).unwrap();
        assert_eq!(img.count_set(), 0);
        assert_eq!(img.size(), 64);
    }

    #[test]
    fn horizontal_line_through_centre() {
        let c = place(48.0, 11.0);
        let road = RoadSegment::new("w", RoadClass::Residential, vec![(48.0, 10.9), (48.0, 11.1)]).unwrap();
        for size in [64usize, 128] {
            let img = render_place(&c, [&road], &unit_style(1), size).unwrap();
            assert_eq!(img.count_set(), size);
            for x in 0..size {
                assert!(img.get(x, size / 2));
            }
        }
    }

    #[test]
    fn style_validation() {
        let mut s = RenderStyle::default();
        assert!(s.validate().is_ok());
        s.zoom = 9;
        assert!(s.validate().is_err());
        let mut s = RenderStyle::default();
        s.stroke_width_px.remove(&RoadClass::Rail);
        assert!(s.validate().is_err());
        let mut s = RenderStyle::default();
        s.stroke_width_px.insert(RoadClass::Other, 0);
        assert!(s.validate().is_err());
        assert!(render_place(&place(0.0, 0.0), [], &unit_style(1), 32).is_err());
    }

    #[test]
    fn emptiness_threshold() {
        let blank = RasterImage::blank("p", 100);
        assert!(is_effectively_empty(&blank, 0.001));
        let full = RasterImage::from_pixels("p", 100, &[1; 10_000]).unwrap();
        assert!(!is_effectively_empty(&full, 0.001));
        // 5 of 10,000 pixels = 0.0005
        let mut sparse = RasterImage::blank("p", 100);
        for i in 0..5 {
            sparse.set(i * 7, i * 3, true);
        }
        assert_eq!(sparse.set_fraction(), 0.0005);
        assert!(is_effectively_empty(&sparse, 0.001));
        assert!(!is_effectively_empty(&sparse, 0.0005));
    }

    #[test]
    fn index_query_matches_scan() {
        let roads: Vec<RoadSegment> = (0..50)
            .map(|i| {
                let lat = (i as f64 * 0.37) % 5.0;
                let lon = (i as f64 * 0.61) % 5.0;
                RoadSegment::new(i.to_string(), RoadClass::Other, vec![(lat, lon), (lat + 0.2, lon + 0.3)]).unwrap()
            })
            .collect();
        let index = RoadIndex::new(roads.clone(), 0.5);
        let (a, b, c, d) = (1.0, 1.5, 2.2, 3.1);
        let got: Vec<&str> = index.query(a, b, c, d).iter().map(|r| r.way_id.as_str()).collect();
        let want: Vec<&str> = roads
            .iter()
            .filter(|r| {
                let (p, q, s, t) = r.bounds();
                p <= c && s >= a && q <= d && t >= b
            })
            .map(|r| r.way_id.as_str())
            .collect();
        assert_eq!(got, want);
        assert!(!got.is_empty());
    }
}
