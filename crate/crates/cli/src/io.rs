//! File layouts shared by the subcommands.
//!
//! A shape directory holds `surface_1.obj`, `surface_2.obj`, ... ; a collection
//! directory holds one shape directory per id.

use std::path::{Path, PathBuf};

use sdf_atlas::geometry::mesh::TriMesh;
use sdf_atlas::geometry::vec3::Vec3;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn require_exists(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingFile(path.to_path_buf()))
    }
}

/// Sorted subdirectory names of a collection directory.
pub fn shape_ids(dir: &Path) -> CliResult<Vec<String>> {
    require_exists(dir)?;
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(CliError::Schema(format!(
            "{} contains no shape directories",
            dir.display()
        )));
    }
    Ok(ids)
}

/// Loads `surface_1.obj ..` from a shape directory; the numbering must be contiguous.
pub fn read_shape(dir: &Path) -> CliResult<Vec<TriMesh>> {
    require_exists(dir)?;
    let mut meshes = Vec::new();
    loop {
        let p = surface_path(dir, meshes.len() + 1);
        if !p.exists() {
            break;
        }
        meshes.push(TriMesh::load_obj(&p)?);
    }
    if meshes.is_empty() {
        return Err(CliError::MissingFile(surface_path(dir, 1)));
    }
    Ok(meshes)
}

pub fn surface_path(dir: &Path, j: usize) -> PathBuf {
    dir.join(format!("surface_{j}.obj"))
}

/// Writes one OBJ per surface and returns the paths written.
pub fn write_shape(dir: &Path, meshes: &[TriMesh]) -> CliResult<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut paths = Vec::new();
    for (j, m) in meshes.iter().enumerate() {
        let p = surface_path(dir, j + 1);
        if m.is_empty() {
            log::warn!(
                "surface {} is empty; writing an empty OBJ to {}",
                j + 1,
                p.display()
            );
        }
        m.save_obj(&p)?;
        paths.push(p);
    }
    Ok(paths)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CodeFile {
    Bare(Vec<f64>),
    Object { z: Vec<f64> },
}

/// A latent code stored as a JSON array or as an object with a `z` field,
/// such as the report written by `complete`.
pub fn read_code(path: &Path) -> CliResult<Vec<f64>> {
    let text = read_text(path)?;
    let code: CodeFile = serde_json::from_str(&text).map_err(|e| {
        CliError::Schema(format!(
            "{}: expected a code array or {{\"z\": [..]}}: {e}",
            path.display()
        ))
    })?;
    let z = match code {
        CodeFile::Bare(z) | CodeFile::Object { z } => z,
    };
    if !z.iter().all(|v| v.is_finite()) {
        return Err(CliError::Numerical(format!(
            "{}: non-finite latent code",
            path.display()
        )));
    }
    Ok(z)
}

/// Comma-separated numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

pub fn parse_bbox(s: &str) -> Result<(Vec3, Vec3), String> {
    let v = parse_list(s)?;
    if v.len() != 6 {
        return Err("expected xmin,ymin,zmin,xmax,ymax,zmax".into());
    }
    let lo = [v[0], v[1], v[2]];
    let hi = [v[3], v[4], v[5]];
    if (0..3).any(|k| !(hi[k] > lo[k])) {
        return Err("box maximum must exceed minimum on every axis".into());
    }
    Ok((lo, hi))
}

pub fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [n] => Ok([*n; 3]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err("expected N or NX,NY,NZ".into()),
    }
}

/// Point cloud with an `x,y,z` header.
pub fn read_points_csv(path: &Path) -> CliResult<Vec<Vec3>> {
    require_exists(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_ascii_lowercase).collect();
    if header != ["x", "y", "z"] {
        return Err(CliError::Schema(format!(
            "{}: expected header x,y,z",
            path.display()
        )));
    }
    let mut pts = Vec::new();
    for row in rdr.deserialize::<(f64, f64, f64)>() {
        let (x, y, z) = row?;
        pts.push([x, y, z]);
    }
    if pts.is_empty() {
        return Err(CliError::Schema(format!("{}: no points", path.display())));
    }
    Ok(pts)
}

pub fn write_points_csv(path: &Path, pts: &[Vec3]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    w.write_record(["x", "y", "z"])?;
    for p in pts {
        w.serialize((p[0], p[1], p[2]))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsers() {
        assert_eq!(parse_dims("64").unwrap(), [64; 3]);
        assert_eq!(parse_dims("8,9,10").unwrap(), [8, 9, 10]);
        assert!(parse_dims("1,2").is_err());
        assert_eq!(
            parse_bbox("0,0,0,1,2,3").unwrap(),
            ([0.0; 3], [1.0, 2.0, 3.0])
        );
        assert!(parse_bbox("0,0,0,1,0,3").is_err());
        assert_eq!(parse_list("-0.5, 0,1.5").unwrap(), vec![-0.5, 0.0, 1.5]);
    }
}
