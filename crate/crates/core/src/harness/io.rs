//! Dataset and image file formats.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;

use super::config::{DatasetDescriptor, DatasetSource};
use crate::data::{gaussian_blobs, subsample, two_moons, Dataset};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::sde::ImageGrid;
use crate::tensor::Tensor;

/// Materializes a dataset descriptor; synthetic sources draw from `rng`.
pub fn load_dataset(desc: &DatasetDescriptor, rng: &mut SimRng) -> Result<Dataset> {
    let data = match &desc.source {
        DatasetSource::Blobs {
            separation,
            noise,
            positive_fraction,
        } => gaussian_blobs(desc.n, desc.dim, *separation, *noise, *positive_fraction, rng)?,
        DatasetSource::Moons { noise } => two_moons(desc.n, desc.dim, *noise, rng)?,
        DatasetSource::Csv {
            path,
            label_column,
            header,
        } => read_csv_dataset(path, *label_column, *header)?,
        DatasetSource::Idx { images, labels } => read_idx_dataset(images, labels)?,
    };
    if desc.subsample > 0 && desc.subsample < data.len() {
        Ok(subsample(&data, desc.subsample, rng))
    } else {
        Ok(data)
    }
}

/// Stratification-free random train/test split.
pub fn train_test_split(data: &Dataset, test_fraction: f64, rng: &mut SimRng) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction must lie in (0, 1)"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    let n_test = ((data.len() as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test == data.len() {
        return Err(Error::invalid("split leaves an empty part"));
    }
    let (test, train) = idx.split_at(n_test);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}

/// Numeric CSV; `label_column` defaults to the last column. Labels must be
/// nonnegative integers; the class count is `max label + 1`.
pub fn read_csv_dataset(path: &Path, label_column: Option<usize>, header: bool) -> Result<Dataset> {
    let text = fs::read(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_csv_dataset(&text, label_column, header)
}

pub fn parse_csv_dataset(bytes: &[u8], label_column: Option<usize>, header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .from_reader(bytes);
    let mut width = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("CSV: {e}")))?;
        let row = rec.position().map(|p| p.line()).unwrap_or(0);
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Parse(format!(
                "CSV row {row}: expected {w} columns, found {}",
                rec.len()
            )));
        }
        if w < 2 {
            return Err(Error::Parse(format!("CSV row {row}: need a label and at least one feature")));
        }
        let lc = label_column.unwrap_or(w - 1);
        if lc >= w {
            return Err(Error::Parse(format!("label column {lc} out of range for {w} columns")));
        }
        for (c, field) in rec.iter().enumerate() {
            let field = field.trim();
            if c == lc {
                let l = field
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("CSV row {row}: label `{field}` is not a class index")))?;
                labels.push(l);
            } else {
                let v = field
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("CSV row {row}, column {}: `{field}` is not a number", c + 1)))?;
                features.push(v);
            }
        }
    }
    let w = width.ok_or_else(|| Error::Parse("CSV contains no data rows".into()))?;
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(Tensor::new(vec![labels.len(), w - 1], features)?, labels, classes)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse(format!("IDX {what}: truncated at byte offset {offset}")))
}

/// IDX image file (magic `0x00000803`): returns `[count, rows·cols]` scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse(format!(
            "IDX images: bad magic {magic:#010x} at byte offset 0"
        )));
    }
    let count = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::Parse(format!(
            "IDX images: pixel data ends at byte offset {} but {need} bytes are required",
            bytes.len()
        )));
    }
    if bytes.len() > need {
        return Err(Error::Parse(format!("IDX images: trailing data at byte offset {need}")));
    }
    if count == 0 || rows * cols == 0 {
        return Err(Error::Parse("IDX images: empty image set".into()));
    }
    let data = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![count, rows * cols], data)
}

/// IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse(format!(
            "IDX labels: bad magic {magic:#010x} at byte offset 0"
        )));
    }
    let count = read_u32(bytes, 4, "labels")? as usize;
    if bytes.len() != 8 + count {
        return Err(Error::Parse(format!(
            "IDX labels: expected {} bytes, file has {} (mismatch at byte offset {})",
            8 + count,
            bytes.len(),
            (8 + count).min(bytes.len())
        )));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

pub fn read_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    let read = |p: &Path| fs::read(p).map_err(|e| Error::Parse(format!("{}: {e}", p.display())));
    let x = parse_idx_images(&read(images)?)?;
    let y = parse_idx_labels(&read(labels)?)?;
    if x.rows() != y.len() {
        return Err(Error::Parse(format!(
            "IDX: {} images but {} labels",
            x.rows(),
            y.len()
        )));
    }
    let classes = y.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(x, y, classes)
}

/// Serializes an IDX image file; the inverse of [`parse_idx_images`] for bytes.
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (1 channel) or PPM (3 channels); pixels are clamped to `[0, 1]`.
pub fn encode_pnm(img: &ImageGrid) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::invalid(format!("PNM supports 1 or 3 channels, not {c}"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.cols, img.rows).into_bytes();
    out.extend(img.pixels.iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageGrid> {
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse(format!("PNM header truncated at byte offset {start}")));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(bytes)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Parse(format!("unsupported PNM magic `{other}` at byte offset 0"))),
    };
    let num = |s: String| s.parse::<usize>().map_err(|_| Error::Parse(format!("PNM header: `{s}` is not a number")));
    let cols = num(token(bytes)?)?;
    let rows = num(token(bytes)?)?;
    let maxval = num(token(bytes)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("PNM maxval {maxval} unsupported (1..=255)")));
    }
    let data_start = pos + 1;
    let need = rows * cols * channels;
    let body = bytes
        .get(data_start..data_start + need)
        .ok_or_else(|| Error::Parse(format!("PNM pixel data truncated after byte offset {}", bytes.len())))?;
    ImageGrid::new(rows, cols, channels, body.iter().map(|&b| b as f64 / maxval as f64).collect())
}

pub fn encode_png(img: &ImageGrid) -> Result<Vec<u8>> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::invalid(format!("PNG export supports 1 or 3 channels, not {c}"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), img.cols as u32, img.rows as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Parse(format!("PNG: {e}")))?;
        let bytes: Vec<u8> = img.pixels.iter().map(|&v| to_byte(v)).collect();
        w.write_image_data(&bytes).map_err(|e| Error::Parse(format!("PNG: {e}")))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageGrid> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Parse(format!("PNG: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Parse("PNG: image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Parse(format!("PNG: {e}")))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::Parse("PNG: unexpanded palette".into())),
    };
    let (rows, cols) = (info.height as usize, info.width as usize);
    let keep = if channels == 2 || channels == 4 { channels - 1 } else { channels };
    let mut pixels = Vec::with_capacity(rows * cols * keep);
    for px in buf[..info.buffer_size()].chunks(channels) {
        pixels.extend(px[..keep].iter().map(|&b| b as f64 / 255.0));
    }
    ImageGrid::new(rows, cols, keep, pixels)
}

/// Reads a PGM/PPM or PNG image, chosen by content.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else {
        decode_pnm(&bytes)
    }
}

/// Writes PNG when the extension is `.png`, binary PNM otherwise.
pub fn write_image(path: &Path, img: &ImageGrid) -> Result<()> {
    let bytes = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        encode_png(img)?
    } else {
        encode_pnm(img)?
    };
    super::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn blobs_descriptor() {
        let desc = DatasetDescriptor {
            source: DatasetSource::Blobs {
                separation: 2.0,
                noise: 1.0,
                positive_fraction: 0.5,
            },
            n: 200,
            dim: 2,
            subsample: 0,
            test_fraction: 0.5,
        };
        let d = load_dataset(&desc, &mut stream(7, 0)).unwrap();
        assert_eq!(d.len(), 200);
        assert_eq!(d.class_counts(), vec![100, 100]);
    }

    #[test]
    fn idx_fixture() {
        let pixels: Vec<u8> = (0..10 * 784).map(|i| (i % 256) as u8).collect();
        let img = encode_idx_images(10, 28, 28, &pixels);
        let t = parse_idx_images(&img).unwrap();
        assert_eq!(t.shape(), &[10, 784]);
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(t.data()[255], 1.0);
        let labels = encode_idx_labels(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(parse_idx_labels(&labels).unwrap().len(), 10);
    }

    #[test]
    fn idx_errors_cite_offsets() {
        let mut img = encode_idx_images(2, 2, 2, &[0; 8]);
        img[3] = 0x01;
        let e = parse_idx_images(&img).unwrap_err().to_string();
        assert!(e.contains("byte offset 0"), "{e}");
        let short = encode_idx_images(2, 2, 2, &[0; 5]);
        let e = parse_idx_images(&short).unwrap_err().to_string();
        assert!(e.contains("byte offset 21"), "{e}");
        assert!(parse_idx_images(&short[..6]).unwrap_err().to_string().contains("byte offset 4"));
    }

    #[test]
    fn idx_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&i, encode_idx_images(3, 2, 2, &[0; 12])).unwrap();
        fs::write(&l, encode_idx_labels(&[0, 1])).unwrap();
        assert!(read_idx_dataset(&i, &l).unwrap_err().to_string().contains("3 images but 2 labels"));
    }

    #[test]
    fn csv_parsing() {
        let d = parse_csv_dataset(b"x,y,label\n1.0,2.0,0\n3,4,1\n", None, true).unwrap();
        assert_eq!(d.features.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(d.labels, vec![0, 1]);
        let q = parse_csv_dataset(b"1,\"2.5\",0\n", Some(2), false).unwrap();
        assert_eq!(q.features.data(), &[1.0, 2.5]);
    }

    #[test]
    fn csv_ragged_row_cites_row() {
        let e = parse_csv_dataset(b"1,2,0\n3,4,1\n5,1\n", None, false).unwrap_err().to_string();
        assert!(e.contains("row 3"), "{e}");
        let e = parse_csv_dataset(b"1,2,0\n3,x,1\n", None, false).unwrap_err().to_string();
        assert!(e.contains("row 2"), "{e}");
    }

    #[test]
    fn pnm_round_trip() {
        let img = ImageGrid::new(2, 3, 3, (0..18).map(|i| i as f64 / 255.0).collect()).unwrap();
        let back = decode_pnm(&encode_pnm(&img).unwrap()).unwrap();
        assert_eq!(back, img);
        let gray = ImageGrid::new(2, 2, 1, vec![0.0, 1.0, 51.0 / 255.0, 1.0]).unwrap();
        assert_eq!(decode_pnm(b"P5\n# c\n2 2\n255\n\x00\xff\x33\xff").unwrap(), gray);
        assert!(decode_pnm(b"P5\n2 2\n255\n\x00").is_err());
    }

    #[test]
    fn png_round_trip() {
        let img = ImageGrid::new(3, 2, 1, (0..6).map(|i| (i * 40) as f64 / 255.0).collect()).unwrap();
        assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn split_sizes() {
        let d = gaussian_blobs(100, 2, 1.0, 1.0, 0.5, &mut stream(1, 0)).unwrap();
        let (a, b) = train_test_split(&d, 0.2, &mut stream(1, 6)).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
    }
}
