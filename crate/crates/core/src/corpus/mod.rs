//! Release-indexed corpora of C components, the JSON-lines corpus file and
//! the clean/realistic training splits.

mod synth;

pub use synth::{
    annotated_function_roles, generate_synthetic_corpus, GeneratedComponent, GeneratedFunction,
    PlantedSignal, SourceGenerator, SynthesisSpec, SENTINEL_CALL, SENTINEL_TOKEN,
};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Vulnerable,
    NonVulnerable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentRecord {
    pub path: String,
    pub source: String,
    pub label: Label,
    /// Post-fix source; present exactly when the component is vulnerable.
    pub fixed_source: Option<String>,
    pub vuln_ids: Vec<String>,
}

impl ComponentRecord {
    pub fn non_vulnerable(path: impl Into<String>, source: impl Into<String>) -> Self {
        ComponentRecord {
            path: path.into(),
            source: source.into(),
            label: Label::NonVulnerable,
            fixed_source: None,
            vuln_ids: Vec::new(),
        }
    }

    pub fn vulnerable(
        path: impl Into<String>,
        source: impl Into<String>,
        fixed_source: impl Into<String>,
        vuln_ids: Vec<String>,
    ) -> Self {
        ComponentRecord {
            path: path.into(),
            source: source.into(),
            label: Label::Vulnerable,
            fixed_source: Some(fixed_source.into()),
            vuln_ids,
        }
    }

    pub fn is_vulnerable(&self) -> bool {
        self.label == Label::Vulnerable
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Release {
    pub name: String,
    pub release_date: NaiveDate,
    pub components: Vec<ComponentRecord>,
}

impl Release {
    pub fn component(&self, path: &str) -> Option<&ComponentRecord> {
        self.components.iter().find(|c| c.path == path)
    }

    /// Ground truth: path → label.
    pub fn labels(&self) -> HashMap<String, Label> {
        self.components.iter().map(|c| (c.path.clone(), c.label)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VulnerabilityRecord {
    pub vuln_id: String,
    pub detection_date: NaiveDate,
    /// (release name, component path)
    pub affected_paths: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub project_name: String,
    pub releases: Vec<Release>,
    pub vulnerabilities: Vec<VulnerabilityRecord>,
}

/// Which labels the training material trusts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Every vulnerability of the training release, however late it was found.
    Clean,
    /// Only vulnerabilities detected before the next release date.
    Realistic,
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::Clean => "clean",
            Setting::Realistic => "realistic",
        })
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Setting::Clean),
            "realistic" => Ok(Setting::Realistic),
            other => Err(Error::Config(format!("unknown setting {other:?}"))),
        }
    }
}

/// A component as the learner sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingComponent {
    pub path: String,
    pub source: String,
    /// Present when the component is treated as vulnerable.
    pub fixed_source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingMaterial {
    pub release: String,
    pub setting: Setting,
    pub components: Vec<TrainingComponent>,
}

impl TrainingMaterial {
    /// (path, vulnerable source, fixed source) for every component used as a fix pair.
    pub fn fix_pairs(&self) -> BTreeSet<(String, String, String)> {
        self.components
            .iter()
            .filter_map(|c| {
                c.fixed_source.as_ref().map(|f| (c.path.clone(), c.source.clone(), f.clone()))
            })
            .collect()
    }

    pub fn vulnerable_count(&self) -> usize {
        self.components.iter().filter(|c| c.fixed_source.is_some()).count()
    }
}

impl Corpus {
    fn check_train_index(&self, index: usize) -> Result<()> {
        if index + 1 >= self.releases.len() {
            return Err(Error::Index { index, releases: self.releases.len() });
        }
        Ok(())
    }

    pub fn release_index(&self, name: &str) -> Option<usize> {
        self.releases.iter().position(|r| r.name == name)
    }

    pub fn vulnerability(&self, id: &str) -> Option<&VulnerabilityRecord> {
        self.vulnerabilities.iter().find(|v| v.vuln_id == id)
    }

    /// Earliest detection date over a component's vulnerability IDs.
    pub fn detection_date(&self, component: &ComponentRecord) -> Result<NaiveDate> {
        component
            .vuln_ids
            .iter()
            .map(|id| {
                self.vulnerability(id).map(|v| v.detection_date).ok_or_else(|| {
                    Error::Integrity(format!("{}: unknown vulnerability {id}", component.path))
                })
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .min()
            .ok_or_else(|| {
                Error::Integrity(format!("{}: vulnerable component has no vulnerability ids", component.path))
            })
    }

    /// All fix pairs of release `index` plus all of its non-vulnerable components.
    pub fn clean_training_set(&self, index: usize) -> Result<TrainingMaterial> {
        self.check_train_index(index)?;
        let release = &self.releases[index];
        Ok(TrainingMaterial {
            release: release.name.clone(),
            setting: Setting::Clean,
            components: release
                .components
                .iter()
                .map(|c| TrainingComponent {
                    path: c.path.clone(),
                    source: c.source.clone(),
                    fixed_source: c.fixed_source.clone(),
                })
                .collect(),
        })
    }

    /// Like [`Corpus::clean_training_set`], but a vulnerable component keeps
    /// its fix only if one of its vulnerabilities was detected strictly
    /// before the next release date; otherwise it is presented as
    /// non-vulnerable.
    pub fn realistic_training_set(&self, index: usize) -> Result<TrainingMaterial> {
        self.check_train_index(index)?;
        let release = &self.releases[index];
        let cutoff = self.releases[index + 1].release_date;
        let components = release
            .components
            .iter()
            .map(|c| {
                let fixed_source = match &c.fixed_source {
                    Some(fixed) if self.detection_date(c)? < cutoff => Some(fixed.clone()),
                    _ => None,
                };
                Ok(TrainingComponent { path: c.path.clone(), source: c.source.clone(), fixed_source })
            })
            .collect::<Result<_>>()?;
        Ok(TrainingMaterial { release: release.name.clone(), setting: Setting::Realistic, components })
    }

    pub fn training_set(&self, index: usize, setting: Setting) -> Result<TrainingMaterial> {
        match setting {
            Setting::Clean => self.clean_training_set(index),
            Setting::Realistic => self.realistic_training_set(index),
        }
    }

    /// Checks every structural invariant of a corpus.
    pub fn validate(&self) -> Result<()> {
        let mut release_names = HashSet::new();
        for (i, release) in self.releases.iter().enumerate() {
            if !release_names.insert(release.name.as_str()) {
                return Err(Error::Integrity(format!("duplicate release {}", release.name)));
            }
            if i > 0 && release.release_date <= self.releases[i - 1].release_date {
                return Err(Error::Integrity(format!(
                    "release {} is not dated after {}",
                    release.name,
                    self.releases[i - 1].name
                )));
            }
            let mut paths = HashSet::new();
            for c in &release.components {
                if !paths.insert(c.path.as_str()) {
                    return Err(Error::Integrity(format!("{}: duplicate path {}", release.name, c.path)));
                }
                match (&c.label, &c.fixed_source) {
                    (Label::Vulnerable, None) => {
                        return Err(Error::Integrity(format!(
                            "{}:{} is vulnerable but has no fixed source",
                            release.name, c.path
                        )))
                    }
                    (Label::NonVulnerable, Some(_)) => {
                        return Err(Error::Integrity(format!(
                            "{}:{} is non-vulnerable but has a fixed source",
                            release.name, c.path
                        )))
                    }
                    (Label::Vulnerable, Some(fixed)) if normalize_ws(fixed) == normalize_ws(&c.source) => {
                        return Err(Error::Integrity(format!(
                            "{}:{} fixed source equals the vulnerable source",
                            release.name, c.path
                        )))
                    }
                    _ => {}
                }
                for id in &c.vuln_ids {
                    if self.vulnerability(id).is_none() {
                        return Err(Error::Integrity(format!(
                            "{}:{} references unknown vulnerability {id}",
                            release.name, c.path
                        )));
                    }
                }
            }
        }
        let mut ids = HashSet::new();
        for v in &self.vulnerabilities {
            if !ids.insert(v.vuln_id.as_str()) {
                return Err(Error::Integrity(format!("duplicate vulnerability {}", v.vuln_id)));
            }
            for (rel, path) in &v.affected_paths {
                let ok = self
                    .releases
                    .iter()
                    .find(|r| &r.name == rel)
                    .and_then(|r| r.component(path))
                    .is_some_and(ComponentRecord::is_vulnerable);
                if !ok {
                    return Err(Error::Integrity(format!(
                        "{} affects {rel}:{path}, which is not a vulnerable component",
                        v.vuln_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of (train, test) release pairs an experiment runs.
    pub fn experiment_pairs(&self) -> usize {
        self.releases.len().saturating_sub(1)
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Header {
        format_version: u32,
        project: String,
    },
    Release {
        name: String,
        date: NaiveDate,
    },
    Component {
        release: String,
        path: String,
        label: Label,
        source: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fixed_source: Option<String>,
        #[serde(default)]
        vuln_ids: Vec<String>,
    },
    Vuln {
        id: String,
        detected: NaiveDate,
        affected: Vec<(String, String)>,
    },
}

/// Writes the JSON-lines corpus format. Output is a pure function of the corpus.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    let mut emit = |record: &Record| -> Result<()> {
        serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        Ok(())
    };
    emit(&Record::Header {
        format_version: CORPUS_FORMAT_VERSION,
        project: corpus.project_name.clone(),
    })?;
    for release in &corpus.releases {
        emit(&Record::Release { name: release.name.clone(), date: release.release_date })?;
        for c in &release.components {
            emit(&Record::Component {
                release: release.name.clone(),
                path: c.path.clone(),
                label: c.label,
                source: c.source.clone(),
                fixed_source: c.fixed_source.clone(),
                vuln_ids: c.vuln_ids.clone(),
            })?;
        }
    }
    for v in &corpus.vulnerabilities {
        emit(&Record::Vuln {
            id: v.vuln_id.clone(),
            detected: v.detection_date,
            affected: v.affected_paths.clone(),
        })?;
    }
    Ok(())
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_corpus(corpus, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    std::fs::write(path, corpus_to_string(corpus))?;
    Ok(())
}

/// Reads and validates a corpus file.
pub fn read_corpus<R: BufRead>(input: R) -> Result<Corpus> {
    let mut corpus: Option<Corpus> = None;
    for (n, line) in input.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        match (record, corpus.as_mut()) {
            (Record::Header { format_version, project }, None) => {
                if format_version != CORPUS_FORMAT_VERSION {
                    return Err(parse_err(format!("unsupported format_version {format_version}")));
                }
                corpus = Some(Corpus { project_name: project, releases: Vec::new(), vulnerabilities: Vec::new() });
            }
            (Record::Header { .. }, Some(_)) => return Err(parse_err("duplicate header".into())),
            (_, None) => return Err(parse_err("first record must be the format header".into())),
            (Record::Release { name, date }, Some(c)) => {
                c.releases.push(Release { name, release_date: date, components: Vec::new() })
            }
            (Record::Component { release, path, label, source, fixed_source, vuln_ids }, Some(c)) => {
                let rel = c
                    .releases
                    .iter_mut()
                    .find(|r| r.name == release)
                    .ok_or_else(|| parse_err(format!("component {path} precedes its release {release}")))?;
                rel.components.push(ComponentRecord { path, source, label, fixed_source, vuln_ids });
            }
            (Record::Vuln { id, detected, affected }, Some(c)) => c.vulnerabilities.push(VulnerabilityRecord {
                vuln_id: id,
                detection_date: detected,
                affected_paths: affected,
            }),
        }
    }
    let corpus = corpus.ok_or(Error::Parse { line: 1, message: "empty corpus file".into() })?;
    corpus.validate()?;
    Ok(corpus)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file))
}
