//! Occupancy grids, ground-truth annotations, the augmented map file and the
//! rasterized overlay.
//!
//! Grids are stored as binary PGM (P5, maxval 255; 0 occupied, 254 free,
//! 205 unknown, top image row = highest y) next to a `.yaml` sidecar holding
//! `resolution`, `origin_x`, `origin_y` and `origin_theta`.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::class::ClassLabel;
use crate::geometry::Pose2D;
use crate::tracker::{NodeId, TrackedInstance, TrackerState};

#[derive(Debug, thiserror::Error)]
pub enum MapIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload has {got} bytes, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("unknown cell byte {0}")]
    UnknownCell(u8),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> MapIoError + '_ {
    move |source| MapIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

impl Cell {
    pub const FREE_BYTE: u8 = 254;
    pub const OCCUPIED_BYTE: u8 = 0;
    pub const UNKNOWN_BYTE: u8 = 205;

    pub fn to_byte(self) -> u8 {
        match self {
            Cell::Free => Self::FREE_BYTE,
            Cell::Occupied => Self::OCCUPIED_BYTE,
            Cell::Unknown => Self::UNKNOWN_BYTE,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, MapIoError> {
        match b {
            Self::FREE_BYTE => Ok(Cell::Free),
            Self::OCCUPIED_BYTE => Ok(Cell::Occupied),
            Self::UNKNOWN_BYTE => Ok(Cell::Unknown),
            other => Err(MapIoError::UnknownCell(other)),
        }
    }
}

/// Trinary 2D metric map. Cell `(col, row)` covers
/// `origin ∘ [col·res, (col+1)·res) × [row·res, (row+1)·res)`; row 0 is the
/// lowest y.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub origin: Pose2D,
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

pub const DEFAULT_RESOLUTION: f64 = 0.05;

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Pose2D, fill: Cell) -> Result<Self, MapIoError> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(MapIoError::InvalidGrid("resolution must be positive".into()));
        }
        if !origin.is_finite() {
            return Err(MapIoError::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self {
            resolution,
            origin,
            width,
            height,
            cells: vec![fill; width * height],
        })
    }

    /// Grid of free cells covering a `length × width` meter area.
    pub fn covering(length: f64, width: f64, resolution: f64, origin: Pose2D) -> Result<Self, MapIoError> {
        let cols = (length / resolution - 1e-9).ceil().max(0.0) as usize;
        let rows = (width / resolution - 1e-9).ceil().max(0.0) as usize;
        Self::new(cols, rows, resolution, origin, Cell::Free)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn get(&self, col: usize, row: usize) -> Option<Cell> {
        (col < self.width && row < self.height).then(|| self.cells[row * self.width + col])
    }

    pub fn set(&mut self, col: usize, row: usize, cell: Cell) {
        if col < self.width && row < self.height {
            self.cells[row * self.width + col] = cell;
        }
    }

    /// Cell containing a world point; may be out of bounds.
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        let local = self.origin.relative(&Pose2D::new(x, y, 0.0));
        (
            (local.x / self.resolution).floor() as i64,
            (local.y / self.resolution).floor() as i64,
        )
    }

    /// World coordinates of a cell's center.
    pub fn world_of(&self, col: i64, row: i64) -> (f64, f64) {
        let local = Pose2D::new((col as f64 + 0.5) * self.resolution, (row as f64 + 0.5) * self.resolution, 0.0);
        let p = self.origin.compose(&local);
        (p.x, p.y)
    }

    pub fn in_bounds(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    pub fn cell_at(&self, x: f64, y: f64) -> Option<Cell> {
        let (c, r) = self.cell_of(x, y);
        self.in_bounds(c, r).then(|| self.cells[r as usize * self.width + c as usize])
    }

    /// Marks every cell whose center lies in the axis-aligned world rectangle.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, cell: Cell) {
        for row in 0..self.height {
            for col in 0..self.width {
                let (x, y) = self.world_of(col as i64, row as i64);
                if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
                    self.cells[row * self.width + col] = cell;
                }
            }
        }
    }
}

pub fn sidecar_path(grid_path: &Path) -> PathBuf {
    grid_path.with_extension("yaml")
}

pub fn save_grid(grid: &OccupancyGrid, path: &Path) -> Result<(), MapIoError> {
    let mut bytes = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    for row in (0..grid.height).rev() {
        bytes.extend(grid.cells[row * grid.width..(row + 1) * grid.width].iter().map(|c| c.to_byte()));
    }
    fs::write(path, bytes).map_err(io_err(path))?;
    let meta = format!(
        "resolution: {}\norigin_x: {}\norigin_y: {}\norigin_theta: {}\n",
        grid.resolution, grid.origin.x, grid.origin.y, grid.origin.theta
    );
    let side = sidecar_path(path);
    fs::write(&side, meta).map_err(io_err(&side))
}

/// Splits the PGM header into its four tokens, skipping `#` comments.
fn pgm_header(data: &[u8]) -> Result<([String; 4], usize), MapIoError> {
    let mut tokens = Vec::with_capacity(4);
    let mut i = 0;
    while tokens.len() < 4 {
        while i < data.len() && data[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < data.len() && data[i] == b'#' {
            while i < data.len() && data[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < data.len() && !data[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(MapIoError::Header("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&data[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the payload
    if i >= data.len() && tokens.len() == 4 {
        return Ok((tokens.try_into().expect("four tokens"), i));
    }
    Ok((tokens.try_into().expect("four tokens"), i + 1))
}

pub fn load_grid(path: &Path) -> Result<OccupancyGrid, MapIoError> {
    let data = fs::read(path).map_err(io_err(path))?;
    let ([magic, w, h, maxval], start) = pgm_header(&data)?;
    if magic != "P5" {
        return Err(MapIoError::Header(format!("expected P5, found {magic}")));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| MapIoError::Header(format!("bad {what} `{s}`")))
    };
    let (width, height) = (parse(&w, "width")?, parse(&h, "height")?);
    if parse(&maxval, "maxval")? != 255 {
        return Err(MapIoError::Header(format!("maxval must be 255, found {maxval}")));
    }
    let payload = data.get(start..).unwrap_or(&[]);
    if payload.len() != width * height {
        return Err(MapIoError::SizeMismatch {
            expected: width * height,
            got: payload.len(),
        });
    }

    let side = sidecar_path(path);
    let meta = fs::read_to_string(&side).map_err(io_err(&side))?;
    let mut fields = [None; 4];
    const KEYS: [&str; 4] = ["resolution", "origin_x", "origin_y", "origin_theta"];
    for (n, line) in meta.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| MapIoError::Parse {
            line: n + 1,
            msg: "expected `key: value`".into(),
        })?;
        let Some(k) = KEYS.iter().position(|k| *k == key.trim()) else {
            continue;
        };
        let v: f64 = value.trim().parse().map_err(|_| MapIoError::Parse {
            line: n + 1,
            msg: format!("bad number for {}", KEYS[k]),
        })?;
        fields[k] = Some(v);
    }
    let get = |k: usize| fields[k].ok_or_else(|| MapIoError::Header(format!("sidecar is missing `{}`", KEYS[k])));
    let origin = Pose2D {
        x: get(1)?,
        y: get(2)?,
        theta: get(3)?,
    };
    let mut grid = OccupancyGrid::new(width, height, get(0)?, origin, Cell::Unknown)?;
    for (file_row, chunk) in payload.chunks(width.max(1)).enumerate().take(height) {
        let row = height - 1 - file_row;
        for (col, &b) in chunk.iter().enumerate() {
            grid.cells[row * width + col] = Cell::from_byte(b)?;
        }
    }
    Ok(grid)
}

/// Labeled object position from the reference map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAnnotation {
    pub class_label: ClassLabel,
    pub pose: Pose2D,
}

/// Parses `class x y theta` records, one per line. Blank lines and `#`
/// comments are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<GroundTruthAnnotation>, MapIoError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| MapIoError::Parse { line: n + 1, msg };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", parts.len())));
        }
        let class_label: ClassLabel = parts[0].parse().map_err(|e: crate::class::UnknownClass| err(e.to_string()))?;
        if !class_label.is_static() {
            return Err(err(format!("class `{class_label}` cannot be annotated")));
        }
        let mut nums = [0.0; 3];
        for (slot, s) in nums.iter_mut().zip(&parts[1..]) {
            *slot = s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad number `{s}`")))?;
        }
        out.push(GroundTruthAnnotation {
            class_label,
            pose: Pose2D::new(nums[0], nums[1], nums[2]),
        });
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<GroundTruthAnnotation>, MapIoError> {
    parse_annotations(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn save_annotations(annotations: &[GroundTruthAnnotation], path: &Path) -> Result<(), MapIoError> {
    let mut text = String::new();
    for a in annotations {
        let _ = writeln!(text, "{} {} {} {}", a.class_label, a.pose.x, a.pose.y, a.pose.theta);
    }
    fs::write(path, text).map_err(io_err(path))
}

/// One `0`/`1` per annotation line: whether the object ever entered sensing
/// range.
pub fn load_mask(path: &Path) -> Result<Vec<bool>, MapIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| match l.trim() {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(MapIoError::Parse {
                line: n + 1,
                msg: format!("expected 0 or 1, found `{other}`"),
            }),
        })
        .collect()
}

pub fn save_mask(mask: &[bool], path: &Path) -> Result<(), MapIoError> {
    let text: String = mask.iter().map(|&m| if m { "1\n" } else { "0\n" }).collect();
    fs::write(path, text).map_err(io_err(path))
}

/// Occupancy grid plus the tracked objects placed on it.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMap {
    /// Path of the grid the instances are drawn on, if any.
    pub grid: Option<String>,
    pub instances: Vec<TrackedInstance>,
}

impl AugmentedMap {
    pub fn from_tracker(grid: Option<String>, tracker: &TrackerState) -> Self {
        Self {
            grid,
            instances: tracker.snapshot(),
        }
    }
}

pub const AUGMENTED_FORMAT: &str = "objmap.augmented";
pub const AUGMENTED_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    format: String,
    version: u32,
    grid: Option<String>,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    id: u64,
    class: ClassLabel,
    x: f64,
    y: f64,
    theta: f64,
    /// Upper triangle of the covariance: xx, xy, xθ, yy, yθ, θθ.
    cov: [f64; 6],
    observation_count: u32,
    last_seen: f64,
    anchor_node: NodeId,
    offset: [f64; 3],
}

impl From<&TrackedInstance> for InstanceRecord {
    fn from(i: &TrackedInstance) -> Self {
        let c = &i.covariance;
        Self {
            id: i.id,
            class: i.class_label,
            x: i.state.x,
            y: i.state.y,
            theta: i.state.theta,
            cov: [c[(0, 0)], c[(0, 1)], c[(0, 2)], c[(1, 1)], c[(1, 2)], c[(2, 2)]],
            observation_count: i.observation_count,
            last_seen: i.last_seen,
            anchor_node: i.anchor_node,
            offset: [i.offset_from_anchor.x, i.offset_from_anchor.y, i.offset_from_anchor.theta],
        }
    }
}

impl TryFrom<InstanceRecord> for TrackedInstance {
    type Error = String;

    fn try_from(r: InstanceRecord) -> Result<Self, String> {
        let [xx, xy, xt, yy, yt, tt] = r.cov;
        let covariance = Matrix3::new(xx, xy, xt, xy, yy, yt, xt, yt, tt);
        if !covariance.iter().all(|v| v.is_finite()) || !(xx > 0.0 && yy > 0.0 && tt > 0.0) {
            return Err(format!("instance {}: covariance diagonal must be positive", r.id));
        }
        if covariance.cholesky().is_none() {
            return Err(format!("instance {}: covariance is not positive-definite", r.id));
        }
        let state = Pose2D {
            x: r.x,
            y: r.y,
            theta: r.theta,
        };
        let offset = Pose2D {
            x: r.offset[0],
            y: r.offset[1],
            theta: r.offset[2],
        };
        if !state.is_finite() || !offset.is_finite() {
            return Err(format!("instance {}: pose is not finite", r.id));
        }
        if r.observation_count == 0 {
            return Err(format!("instance {}: observation_count must be at least 1", r.id));
        }
        Ok(TrackedInstance {
            id: r.id,
            class_label: r.class,
            state,
            covariance,
            observation_count: r.observation_count,
            last_seen: r.last_seen,
            anchor_node: r.anchor_node,
            offset_from_anchor: offset,
        })
    }
}

/// Serializes the map as JSON lines: a header record followed by one record
/// per instance.
pub fn write_augmented(map: &AugmentedMap, mut out: impl Write) -> io::Result<()> {
    let header = HeaderRecord {
        format: AUGMENTED_FORMAT.into(),
        version: AUGMENTED_VERSION,
        grid: map.grid.clone(),
        count: map.instances.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for inst in &map.instances {
        serde_json::to_writer(&mut out, &InstanceRecord::from(inst))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_augmented(map: &AugmentedMap, path: &Path) -> Result<(), MapIoError> {
    let mut buf = Vec::new();
    write_augmented(map, &mut buf).map_err(io_err(path))?;
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_augmented(input: impl BufRead) -> Result<AugmentedMap, MapIoError> {
    let mut lines = input.lines().enumerate();
    let schema = |line: usize, msg: String| MapIoError::Schema(format!("line {line}: {msg}"));
    let (_, first) = lines
        .next()
        .ok_or_else(|| MapIoError::Schema("missing header record".into()))?;
    let first = first.map_err(|e| schema(1, e.to_string()))?;
    let header: HeaderRecord = serde_json::from_str(&first).map_err(|e| schema(1, e.to_string()))?;
    if header.format != AUGMENTED_FORMAT || header.version != AUGMENTED_VERSION {
        return Err(schema(1, format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut instances = Vec::with_capacity(header.count);
    for (n, line) in lines {
        let line = line.map_err(|e| schema(n + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| schema(n + 1, e.to_string()))?;
        instances.push(TrackedInstance::try_from(rec).map_err(|e| schema(n + 1, e))?);
    }
    if instances.len() != header.count {
        return Err(MapIoError::Schema(format!(
            "header announces {} instances, found {}",
            header.count,
            instances.len()
        )));
    }
    Ok(AugmentedMap {
        grid: header.grid,
        instances,
    })
}

pub fn load_augmented(path: &Path) -> Result<AugmentedMap, MapIoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_augmented(BufReader::new(file))
}

pub type Rgb = [u8; 3];

pub fn class_color(class: ClassLabel) -> Rgb {
    match class {
        ClassLabel::Door => [0, 255, 0],
        ClassLabel::FireExtinguisher => [255, 0, 0],
        ClassLabel::TrashBin => [255, 255, 0],
        ClassLabel::WaterFountain => [0, 255, 255],
        ClassLabel::Bench => [0, 0, 139],
        ClassLabel::Person => [255, 0, 255],
    }
}

/// RGB raster with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = c;
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: Image,
    /// Instances that fell outside the grid and were clamped to its border.
    pub clamped: usize,
}

const GLYPH_HALF: i64 = 2;
const TICK_CELLS: i64 = 7;

/// Draws the grid in grayscale and each instance as a 5×5-cell square in its
/// class color with a 7-cell heading tick.
pub fn render(map: &AugmentedMap, grid: &OccupancyGrid) -> Result<Rendered, MapIoError> {
    if grid.width == 0 || grid.height == 0 {
        return Err(MapIoError::InvalidGrid("cannot render an empty grid".into()));
    }
    let (w, h) = (grid.width, grid.height);
    let mut image = Image {
        width: w,
        height: h,
        pixels: Vec::with_capacity(w * h),
    };
    for y in 0..h {
        let row = h - 1 - y;
        image.pixels.extend(grid.cells[row * w..(row + 1) * w].iter().map(|c| match c {
            Cell::Free => [255, 255, 255],
            Cell::Occupied => [0, 0, 0],
            Cell::Unknown => [128, 128, 128],
        }));
    }
    let mut clamped = 0;
    for inst in &map.instances {
        let (mut col, mut row) = grid.cell_of(inst.state.x, inst.state.y);
        if !grid.in_bounds(col, row) {
            clamped += 1;
            col = col.clamp(0, w as i64 - 1);
            row = row.clamp(0, h as i64 - 1);
        }
        let color = class_color(inst.class_label);
        let to_px = |c: i64, r: i64| (c, h as i64 - 1 - r);
        for dr in -GLYPH_HALF..=GLYPH_HALF {
            for dc in -GLYPH_HALF..=GLYPH_HALF {
                let (x, y) = to_px(col + dc, row + dr);
                image.put(x, y, color);
            }
        }
        let heading = inst.state.theta - grid.origin.theta;
        let (s, c) = heading.sin_cos();
        for k in 1..=TICK_CELLS {
            let dc = (c * (GLYPH_HALF + k) as f64).round() as i64;
            let dr = (s * (GLYPH_HALF + k) as f64).round() as i64;
            let (x, y) = to_px(col + dc, row + dr);
            image.put(x, y, color);
        }
    }
    Ok(Rendered { image, clamped })
}

pub fn save_image(image: &Image, path: &Path) -> Result<(), MapIoError> {
    fs::write(path, image.to_ppm()).map_err(io_err(path))
}
