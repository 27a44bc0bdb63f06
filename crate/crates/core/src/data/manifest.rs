//! Manifest CSV and feature-file I/O.
//!
//! A manifest has the header `sample_id,patient_id,site_id,label,kind,path`.
//! `kind` is `image` (binary PPM) or `features`; relative paths resolve
//! against the manifest's directory. A feature file is the line
//! `fedhorizon-features v1 <d>` followed by one line of `d` comma-separated
//! reals.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, ImageReader, RgbImage};

use super::{DataError, Payload, SampleRecord, SiteDataset};

pub const MANIFEST_HEADER: [&str; 6] = ["sample_id", "patient_id", "site_id", "label", "kind", "path"];
const FEATURES_MAGIC: &str = "fedhorizon-features";
const FEATURES_VERSION: &str = "v1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<SiteDataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let malformed = |line: u64, message: String| DataError::MalformedRow { path: path.to_path_buf(), line, message };

    let headers = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    if headers.iter().map(str::trim).ne(MANIFEST_HEADER) {
        return Err(malformed(1, format!("expected header {:?}", MANIFEST_HEADER.join(","))));
    }

    let mut records = Vec::new();
    let mut site: Option<String> = None;
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != MANIFEST_HEADER.len() {
            return Err(malformed(line, format!("expected 6 fields, found {}", row.len())));
        }
        let field = |i: usize| row[i].trim();
        let label: i64 = field(3).parse().map_err(|_| malformed(line, format!("label {:?} is not an integer", field(3))))?;
        if !(1..=4).contains(&label) {
            return Err(DataError::LabelOutOfRange { path: path.to_path_buf(), line, label });
        }
        let target = base.join(field(5));
        if !target.is_file() {
            return Err(DataError::DanglingReference { path: path.to_path_buf(), line, target });
        }
        let payload = match field(4) {
            "features" => Payload::Features(read_feature_file(&target)?),
            "image" => Payload::Image(read_ppm(&target)?),
            other => return Err(malformed(line, format!("unknown kind {other:?}"))),
        };
        let site_id = field(2).to_string();
        match &site {
            None => site = Some(site_id.clone()),
            Some(s) if *s != site_id => {
                return Err(malformed(line, format!("site {site_id:?} differs from {s:?} on earlier rows")));
            }
            _ => {}
        }
        records.push(SampleRecord::new(field(0), field(1), site_id, label as u8, payload)?);
    }
    let site_id = site.unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    SiteDataset::new(site_id, records)
}

/// Writes `ds` to `manifest_path`, with one payload file per record under
/// `<manifest stem>_data/`. Output is byte-deterministic.
pub fn save_manifest(ds: &SiteDataset, manifest_path: impl AsRef<Path>) -> Result<(), DataError> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let stem = manifest_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "manifest".into());
    let data_dir_name = format!("{stem}_data");
    let data_dir = base.join(&data_dir_name);
    fs::create_dir_all(&data_dir).map_err(io_err(&data_dir))?;

    let file = File::create(manifest_path).map_err(io_err(manifest_path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| DataError::Io { path: manifest_path.to_path_buf(), source: std::io::Error::other(e) };
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for r in ds.records() {
        let id = &r.sample_id;
        if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) {
            return Err(DataError::InvalidSampleId(id.clone()));
        }
        let (kind, file_name) = match &r.payload {
            Payload::Features(f) => {
                let name = format!("{id}.features");
                write_feature_file(data_dir.join(&name), f)?;
                ("features", name)
            }
            Payload::Image(img) => {
                let name = format!("{id}.ppm");
                write_ppm(&data_dir.join(&name), img)?;
                ("image", name)
            }
        };
        let rel = format!("{data_dir_name}/{file_name}");
        w.write_record([id.as_str(), &r.patient_id, &r.site_id, &r.label().to_string(), kind, &rel]).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(manifest_path))?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<Vec<f64>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |message: String| DataError::FeatureFormat { path: path.to_path_buf(), message };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let dim = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        [FEATURES_MAGIC, FEATURES_VERSION, d] => d.parse::<usize>().map_err(|_| bad(format!("bad dimension {d:?}")))?,
        _ => return Err(bad(format!("bad header {header:?}"))),
    };
    let body = lines.next().unwrap_or("").trim();
    let values: Vec<f64> = if body.is_empty() {
        Vec::new()
    } else {
        body.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("bad value {s:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    if values.len() != dim {
        return Err(bad(format!("header declares {dim} values, found {}", values.len())));
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing content after the value line".into()));
    }
    Ok(values)
}

/// Values use Rust's shortest round-trip decimal formatting.
pub fn write_feature_file(path: impl AsRef<Path>, values: &[f64]) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let body = values.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    writeln!(w, "{FEATURES_MAGIC} {FEATURES_VERSION} {}", values.len())
        .and_then(|_| writeln!(w, "{body}"))
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

fn read_ppm(path: &Path) -> Result<RgbImage, DataError> {
    let decode_err = |message: String| DataError::ImageDecode { path: path.to_path_buf(), message };
    let mut reader = ImageReader::open(path).map_err(io_err(path))?;
    reader.set_format(ImageFormat::Pnm);
    Ok(reader.decode().map_err(|e| decode_err(e.to_string()))?.to_rgb8())
}

fn write_ppm(path: &PathBuf, img: &RgbImage) -> Result<(), DataError> {
    let file = BufWriter::new(File::create(path).map_err(io_err(path))?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .map_err(|e| DataError::ImageDecode { path: path.clone(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn header_only_manifest_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "ucl.csv", "sample_id,patient_id,site_id,label,kind,path\n");
        let ds = load_manifest(&p).unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(ds.site_id(), "ucl");
    }

    #[test]
    fn label_five_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.features", "fedhorizon-features v1 2\n1.0,2.0\n");
        let p = write(
            dir.path(),
            "m.csv",
            "sample_id,patient_id,site_id,label,kind,path\ns1,p1,nih,1,features,a.features\ns2,p1,nih,5,features,a.features\n",
        );
        match load_manifest(&p) {
            Err(DataError::LabelOutOfRange { line, label, .. }) => assert_eq!((line, label), (3, 5)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_and_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "sample_id,patient_id,site_id,label,kind,path\ns1,p1,nih,1,features,missing.features\n");
        assert!(matches!(load_manifest(&p), Err(DataError::DanglingReference { line: 2, .. })));
        let p = write(dir.path(), "m2.csv", "sample_id,patient_id,site_id,label,kind,path\ns1,p1,nih\n");
        assert!(matches!(load_manifest(&p), Err(DataError::MalformedRow { line: 2, .. })));
        let p = write(dir.path(), "m3.csv", "id,patient,site,label,kind,path\n");
        assert!(matches!(load_manifest(&p), Err(DataError::MalformedRow { line: 1, .. })));
        assert!(matches!(load_manifest(dir.path().join("nope.csv")), Err(DataError::Io { .. })));
    }

    #[test]
    fn feature_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "f", "fedhorizon-features v1 3\n1,2\n");
        assert!(read_feature_file(&p).is_err());
        let p = write(dir.path(), "g", "fedhorizon-features v2 1\n1\n");
        assert!(read_feature_file(&p).is_err());
        let p = write(dir.path(), "h", "fedhorizon-features v1 2\n0.5, -1e-3\n");
        assert_eq!(read_feature_file(&p).unwrap(), vec![0.5, -1e-3]);
    }

    #[test]
    fn round_trip_with_images_and_features() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(3, 2, |x, y| Rgb([x as u8 * 80, y as u8 * 100, 7]));
        let ds = SiteDataset::new(
            "nih",
            vec![
                SampleRecord::new("s1", "p1", "nih", 1, Payload::Features(vec![0.1, -2.5e-7, 3.0])).unwrap(),
                SampleRecord::new("s2", "p2", "nih", 4, Payload::Image(img)).unwrap(),
            ],
        )
        .unwrap();
        let p = dir.path().join("nih.csv");
        save_manifest(&ds, &p).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), ds);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("sample_id,patient_id,site_id,label,kind,path\n"));
        assert!(text.contains("s2,p2,nih,4,image,nih_data/s2.ppm"));
    }

    #[test]
    fn rejects_path_like_sample_ids() {
        let dir = tempfile::tempdir().unwrap();
        let ds = SiteDataset::new("s", vec![SampleRecord::new("../x", "p", "s", 1, Payload::Features(vec![])).unwrap()]).unwrap();
        assert!(matches!(save_manifest(&ds, dir.path().join("m.csv")), Err(DataError::InvalidSampleId(_))));
    }
}
