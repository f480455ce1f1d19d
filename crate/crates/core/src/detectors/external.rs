use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::error::{Error, Result};
use crate::formats::parse_tile_detections;
use crate::model::{ClassTable, Detection};
use crate::tiler::parse_manifest;

/// Runs an external detector program over a whole manifest in one invocation.
///
/// The command template is run through `sh -c` after substituting
/// `{input}` (manifest path), `{output}` (detection file to write) and
/// `{workdir}`. The program must write one line per detection:
/// `cutout_name,class_name,xmin,ymin,xmax,ymax,confidence` in tile pixels.
#[derive(Clone, Debug)]
pub struct ExternalDetector {
    pub command_template: String,
    pub classes: ClassTable,
}

impl ExternalDetector {
    pub fn new(command_template: impl Into<String>, classes: ClassTable) -> Result<Self> {
        let command_template = command_template.into();
        for ph in ["{input}", "{output}"] {
            if !command_template.contains(ph) {
                return Err(Error::InvalidConfig(format!("detector command lacks the {ph} placeholder")));
            }
        }
        Ok(Self { command_template, classes })
    }

    pub fn run(&self, manifest_path: &Path, workdir: &Path) -> Result<BTreeMap<String, Vec<Detection>>> {
        external_detect(manifest_path, workdir, &self.command_template, &self.classes)
    }
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

/// Detections per cutout name; every manifest tile has an entry.
pub fn external_detect(
    manifest_path: &Path,
    workdir: &Path,
    command_template: &str,
    classes: &ClassTable,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    let manifest_path = &std::path::absolute(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let workdir = &std::path::absolute(workdir).map_err(|e| Error::io(workdir, e))?;
    let manifest_text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = parse_manifest(&manifest_text, &manifest_path.display().to_string())?;
    let output: PathBuf = workdir.join("external_detections.csv");
    if output.exists() {
        std::fs::remove_file(&output).map_err(|e| Error::io(&output, e))?;
    }
    let command = command_template
        .replace("{input}", &shell_quote(manifest_path))
        .replace("{output}", &shell_quote(&output))
        .replace("{workdir}", &shell_quote(workdir));
    log::debug!("running external detector: {command}");
    let result = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .current_dir(workdir)
        .output()
        .map_err(|e| Error::ProcessFailure { status: "spawn failed".into(), stderr: e.to_string() })?;
    if !result.status.success() {
        return Err(Error::ProcessFailure {
            status: result.status.to_string(),
            stderr: String::from_utf8_lossy(&result.stderr).trim().to_string(),
        });
    }
    let text = std::fs::read_to_string(&output).map_err(|e| Error::ProcessFailure {
        status: result.status.to_string(),
        stderr: format!("no detection file at {}: {e}", output.display()),
    })?;

    let mut per_tile: BTreeMap<String, Vec<Detection>> =
        manifest.iter().map(|m| (m.cutout_name.clone(), Vec::new())).collect();
    for (name, det) in parse_tile_detections(&text, &output.display().to_string(), classes)? {
        per_tile.get_mut(&name).ok_or_else(|| Error::UnknownCutout(name.clone()))?.push(det);
    }
    Ok(per_tile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, Frame, TileId};

    fn setup(dir: &Path) -> PathBuf {
        let manifest = dir.join("manifest.tsv");
        std::fs::write(
            &manifest,
            "s|0_0_416_416.png\ts\t0\t0\t416\t416\ns|0_353_416_416.png\ts\t0\t353\t416\t416\n",
        )
        .unwrap();
        manifest
    }

    #[test]
    fn empty_output_means_no_detections() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = setup(dir.path());
        let classes = ClassTable::default_overhead();
        let out = external_detect(&manifest, dir.path(), "cat {input} > /dev/null; : > {output}", &classes).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.values().all(Vec::is_empty));
    }

    #[test]
    fn pass_through_rows() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = setup(dir.path());
        let classes = ClassTable::default_overhead();
        let cmd = r#"cut -f1 {input} | sed 's/$/,car,1,2,11,12.5,0.9/' > {output}"#;
        let out = ExternalDetector::new(cmd, classes).unwrap().run(&manifest, dir.path()).unwrap();
        let d = &out["s|0_353_416_416.png"];
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox, BoundingBox::new(1., 2., 11., 12.5).unwrap());
        assert_eq!(d[0].frame, Frame::TileLocal(TileId { row: 0, col: 353 }));
        assert_eq!(out["s|0_0_416_416.png"].len(), 1);
    }

    #[test]
    fn clamps_out_of_range_confidence() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = setup(dir.path());
        let classes = ClassTable::default_overhead();
        let cmd = "echo 's|0_0_416_416.png,boat,0,0,5,5,1.7' > {output} # {input}";
        let out = external_detect(&manifest, dir.path(), cmd, &classes).unwrap();
        assert_eq!(out["s|0_0_416_416.png"][0].confidence, 1.0);
    }

    #[test]
    fn failures() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = setup(dir.path());
        let classes = ClassTable::default_overhead();
        let err = external_detect(&manifest, dir.path(), "echo boom >&2; exit 3 # {input} {output}", &classes).unwrap_err();
        match err {
            Error::ProcessFailure { stderr, .. } => assert_eq!(stderr, "boom"),
            e => panic!("{e:?}"),
        }
        let err = external_detect(
            &manifest,
            dir.path(),
            "printf 's|0_0_416_416.png,car,0,0,5,5,0.5\\nx|9_9_1_1.png,car,0,0,5,5,0.5\\n' > {output} # {input}",
            &classes,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownCutout(ref n) if n == "x|9_9_1_1.png"), "{err:?}");
        let err = external_detect(
            &manifest,
            dir.path(),
            "printf 's|0_0_416_416.png,car,0,0,5,5,0.5\\ns|0_0_416_416.png,car,0,0\\n' > {output} # {input}",
            &classes,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let err = external_detect(&manifest, dir.path(), "/nonexistent/detector {input} {output}", &classes).unwrap_err();
        assert!(matches!(err, Error::ProcessFailure { .. }));
        assert!(ExternalDetector::new("run {input}", ClassTable::default_overhead()).is_err());
    }
}
