//! Output helpers: atomic file writes, mask PNGs and heatmap grid files.

use std::fs;
use std::io::Write;
use std::path::Path;

use satpose::heatmap::Heatmap;
use satpose::rasterizer::FineMask;

use crate::error::CliError;

/// Writes `bytes` to a temporary file beside `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    let mut builder = tempfile::Builder::new();
    // plain-create mode so the umask decides, not the 0600 temp-file default
    #[cfg(unix)]
    builder.permissions(std::os::unix::fs::PermissionsExt::from_mode(0o666));
    let mut tmp = builder
        .tempfile_in(dir)
        .map_err(|e| CliError::io(dir.display(), e))?;
    tmp.write_all(bytes)
        .map_err(|e| CliError::io(path.display(), e))?;
    tmp.persist(path)
        .map_err(|e| CliError::io(path.display(), e.error))?;
    Ok(())
}

/// Palette index = part label: background, antenna1..3, solar panel, body.
pub const MASK_PALETTE: [[u8; 3]; 6] = [
    [0, 0, 0],
    [230, 60, 60],
    [60, 200, 60],
    [60, 100, 230],
    [240, 200, 40],
    [170, 170, 170],
];

/// Encodes a mask as an 8-bit indexed PNG whose pixel values are the labels.
pub fn mask_png(mask: &FineMask) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, mask.width() as u32, mask.height() as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(MASK_PALETTE.concat());
        let mut writer = enc
            .write_header()
            .map_err(|e| CliError::Io(format!("png header: {e}")))?;
        writer
            .write_image_data(mask.labels())
            .map_err(|e| CliError::Io(format!("png data: {e}")))?;
    }
    Ok(out)
}

/// Decodes a PNG written by [`mask_png`].
pub fn read_mask_png(bytes: &[u8]) -> Result<FineMask, CliError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| CliError::Validation(format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| CliError::Validation(format!("png: {e}")))?;
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(CliError::Validation(
            "png: expected an 8-bit indexed image".into(),
        ));
    }
    buf.truncate(info.buffer_size());
    FineMask::from_labels(info.height as usize, info.width as usize, buf)
        .map_err(|e| CliError::Validation(format!("png: {e}")))
}

pub fn write_heatmap(path: &Path, h: &Heatmap) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    h.write_to(&mut bytes)
        .map_err(|e| CliError::io(path.display(), e))?;
    write_atomic(path, &bytes)
}

pub fn read_heatmap(path: &Path, stride: u32) -> Result<Heatmap, CliError> {
    let mut file = fs::File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    Heatmap::read_from(&mut file, stride)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Shortest round-trip text for a float; exponent form for very small or
/// large magnitudes.
pub fn fmt_f64(x: f64) -> String {
    serde_json::Number::from_f64(x).map_or_else(|| x.to_string(), |n| n.to_string())
}

/// Serializes rows with the csv crate into an in-memory buffer.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>, CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)
        .map_err(|e| CliError::Io(format!("csv: {e}")))?;
    for row in rows {
        w.write_record(row)
            .map_err(|e| CliError::Io(format!("csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| CliError::Io(format!("csv: {e}")))
}
