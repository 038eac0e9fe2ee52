//! Reader and writer for binvox v1 files.
//!
//! Layout: ASCII header lines `#binvox 1`, `dim D D D`, `translate tx ty tz`,
//! `scale s`, `data`, followed by run-length pairs `(value, count)` with
//! `value ∈ {0, 1}` and `1 ≤ count ≤ 255`. The payload enumerates voxels with
//! y fastest, then z, then x; grids are reordered to the internal x-fastest
//! order on the way in and back on the way out.

use crate::error::{Error, Result};
use crate::voxel::VoxelGrid;

const MAGIC: &str = "#binvox 1";

#[derive(Clone, Debug, PartialEq)]
pub struct BinvoxMeta {
    pub dims: [usize; 3],
    pub translate: [f64; 3],
    pub scale: f64,
}

impl BinvoxMeta {
    /// Unit-cube placement for a grid of the given resolution.
    pub fn for_resolution(resolution: usize) -> Self {
        BinvoxMeta {
            dims: [resolution; 3],
            translate: [0.0; 3],
            scale: 1.0,
        }
    }
}

/// Payload position of internal voxel `(x, y, z)`.
#[inline]
fn payload_index(r: usize, x: usize, y: usize, z: usize) -> usize {
    x * r * r + z * r + y
}

pub fn decode(bytes: &[u8]) -> Result<(VoxelGrid, BinvoxMeta)> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let rest = &bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(start, "unterminated header line"))?;
        *pos = start + end + 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::format(start, "header is not ASCII"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (_, magic) = next_line(&mut pos)?;
    if magic.trim() != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}")));
    }

    let mut dims = None;
    let mut translate = [0.0; 3];
    let mut scale = 1.0;
    loop {
        let (offset, line) = next_line(&mut pos)?;
        let mut tokens = line.split_whitespace();
        let Some(key) = tokens.next() else { continue };
        let values: Vec<&str> = tokens.collect();
        match key {
            "data" => break,
            "dim" => {
                let d = parse_n::<usize, 3>(&values, offset, "dim")?;
                dims = Some(d);
            }
            "translate" => translate = parse_n::<f64, 3>(&values, offset, "translate")?,
            "scale" => scale = parse_n::<f64, 1>(&values, offset, "scale")?[0],
            k if k.starts_with('#') => {}
            other => {
                return Err(Error::format(offset, format!("unknown header key {other:?}")))
            }
        }
    }
    let dims = dims.ok_or_else(|| Error::format(pos, "missing dim line"))?;
    if dims[0] != dims[1] || dims[1] != dims[2] || dims[0] == 0 {
        return Err(Error::format(0, format!("non-cubic dims {dims:?}")));
    }
    let r = dims[0];
    let total = r * r * r;

    let payload = &bytes[pos..];
    if !payload.len().is_multiple_of(2) {
        return Err(Error::format(
            pos + payload.len() - 1,
            "dangling byte in run-length payload",
        ));
    }
    let mut linear = vec![false; total];
    let mut filled = 0usize;
    for (k, pair) in payload.chunks_exact(2).enumerate() {
        let offset = pos + 2 * k;
        let (value, count) = (pair[0], pair[1] as usize);
        if value > 1 {
            return Err(Error::format(offset, format!("voxel value byte {value}")));
        }
        if filled + count > total {
            return Err(Error::format(
                offset,
                format!("runs overflow {total} voxels (reach {})", filled + count),
            ));
        }
        if value == 1 {
            linear[filled..filled + count].fill(true);
        }
        filled += count;
    }
    if filled != total {
        return Err(Error::format(
            bytes.len(),
            format!("runs cover {filled} of {total} voxels"),
        ));
    }

    let grid = VoxelGrid::from_fn(r, |x, y, z| linear[payload_index(r, x, y, z)]);
    Ok((
        grid,
        BinvoxMeta {
            dims,
            translate,
            scale,
        },
    ))
}

fn parse_n<T, const N: usize>(
    values: &[&str],
    offset: usize,
    key: &str,
) -> Result<[T; N]>
where
    T: std::str::FromStr + Copy + Default,
{
    if values.len() != N {
        return Err(Error::format(
            offset,
            format!("`{key}` expects {N} values, got {}", values.len()),
        ));
    }
    let mut out = [T::default(); N];
    for (o, v) in out.iter_mut().zip(values) {
        *o = v
            .parse()
            .map_err(|_| Error::format(offset, format!("bad `{key}` value {v:?}")))?;
    }
    Ok(out)
}

pub fn encode(grid: &VoxelGrid, meta: &BinvoxMeta) -> Result<Vec<u8>> {
    let r = grid.resolution();
    if meta.dims != [r; 3] {
        return Err(Error::Dimension(format!(
            "meta dims {:?} do not match grid resolution {r}",
            meta.dims
        )));
    }
    let mut out = format!(
        "{MAGIC}\ndim {r} {r} {r}\ntranslate {} {} {}\nscale {}\ndata\n",
        meta.translate[0], meta.translate[1], meta.translate[2], meta.scale
    )
    .into_bytes();

    let mut linear = vec![false; r * r * r];
    for (x, y, z) in grid.iter_occupied() {
        linear[payload_index(r, x, y, z)] = true;
    }
    let mut iter = linear.into_iter().peekable();
    while let Some(v) = iter.next() {
        let mut count = 1u8;
        while count < u8::MAX && iter.peek() == Some(&v) {
            iter.next();
            count += 1;
        }
        out.push(v as u8);
        out.push(count);
    }
    Ok(out)
}

pub fn read_file(path: &std::path::Path) -> Result<(VoxelGrid, BinvoxMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode(&bytes)
}

pub fn write_file(path: &std::path::Path, grid: &VoxelGrid, meta: &BinvoxMeta) -> Result<()> {
    let bytes = encode(grid, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}
