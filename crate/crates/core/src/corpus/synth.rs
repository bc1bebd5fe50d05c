//! Deterministic synthetic corpora.
//!
//! Vulnerable components contain a function that divides by (or takes the
//! remainder by) a value that may be zero; the fixed version inserts an `if`
//! guard on that value before it is used. Non-vulnerable components hold
//! arithmetic-free functions and already-guarded variants. Everything is
//! emitted as plain C text so the full parsing path is exercised.

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

use super::{ComponentRecord, Corpus, Release, VulnerabilityRecord};
use crate::cparse::IdentRole;
use crate::error::{Error, Result};

/// Identifier planted in every vulnerable component under [`PlantedSignal::Token`].
pub const SENTINEL_TOKEN: &str = "legacy_div_mode";
/// Function called from every vulnerable component under [`PlantedSignal::Call`].
pub const SENTINEL_CALL: &str = "unchecked_scale";

/// A feature that perfectly marks vulnerable components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedSignal {
    Token,
    Call,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSpec {
    pub n_releases: usize,
    pub components_per_release: usize,
    /// Exact share of vulnerable components per release (rounded to a count).
    pub vuln_fraction: f64,
    /// Zipf exponent for template choice; larger means fewer
    /// distinct shapes.
    pub vocabulary_skew: f64,
    /// Mean delay between a vulnerability's first release and its detection.
    pub detection_lag_days: i64,
    pub release_spacing_days: i64,
    /// Probability that a vulnerable component is carried unfixed into the
    /// next release.
    pub persistence: f64,
    pub planted_signal: Option<PlantedSignal>,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        SynthesisSpec {
            n_releases: 4,
            components_per_release: 60,
            vuln_fraction: 0.2,
            vocabulary_skew: 1.0,
            detection_lag_days: 60,
            release_spacing_days: 90,
            persistence: 0.25,
            planted_signal: None,
        }
    }
}

impl SynthesisSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_releases < 2 {
            return bad("n_releases must be at least 2");
        }
        if self.components_per_release == 0 {
            return bad("components_per_release must be positive");
        }
        if !(self.vuln_fraction > 0.0 && self.vuln_fraction < 1.0) {
            return bad("vuln_fraction must lie strictly between 0 and 1");
        }
        if !(self.vocabulary_skew >= 0.0 && self.vocabulary_skew.is_finite()) {
            return bad("vocabulary_skew must be finite and non-negative");
        }
        if self.detection_lag_days < 0 || self.release_spacing_days <= 0 {
            return bad("detection lag must be non-negative and release spacing positive");
        }
        if !(0.0..=1.0).contains(&self.persistence) {
            return bad("persistence must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn vulnerable_per_release(&self) -> usize {
        (self.vuln_fraction * self.components_per_release as f64).round() as usize
    }
}

const FUNCTION_NAMES: &[&str] = &[
    "igmp_heard_query", "igmp_start_timer", "dev_load", "tcp_rcv_state", "udp_flush_pending",
    "sock_update_rate", "skb_trim_head", "ip_route_lookup", "nf_queue_reset", "vlan_poll_ctrl",
    "br_update_timer", "tun_xmit_frame", "sctp_assoc_init", "xfrm_state_check", "ipv6_mc_report",
    "arp_queue_flush", "neigh_update_delay", "qdisc_reset_rate", "napi_poll_budget", "rtnl_fill_info",
];
const CALL_NAMES: &[&str] = &[
    "mod_timer", "atomic_inc", "net_random", "rcu_read_lock", "rcu_read_unlock", "spin_lock",
    "spin_unlock", "kfree", "dev_hold", "skb_pull", "get_rate", "igmp_mrc", "jiffies_delta",
    "read_counter",
];
const TYPE_NAMES: &[&str] = &[
    "in_device", "ip_mc_list", "net_device", "sk_buff", "sock", "timer_list", "flow_state",
    "sctp_assoc", "nf_queue",
];
const VAR_NAMES: &[&str] = &[
    "max_delay", "len", "im", "tv", "dev", "cnt", "rate", "skb", "idx", "n", "delay", "scale",
    "obj", "ctx", "q", "budget",
];
const FIELD_NAMES: &[&str] = &[
    "code", "tm_running", "timer", "refcnt", "count", "lock", "buf", "interval", "users",
    "hold", "frames", "state",
];
const MACRO_NAMES: &[&str] = &["HZ", "IGMP_TIMER_SCALE", "MAX_RATE", "TICKS", "jiffies"];
const HEADERS: &[&str] = &[
    "linux/kernel.h", "linux/skbuff.h", "linux/timer.h", "linux/netdevice.h", "net/sock.h",
    "linux/spinlock.h",
];

/// A vulnerable template and its guarded fix. `$guard` marks where the
/// guard goes.
struct VulnTemplate {
    body: &'static str,
    guard: &'static str,
}

const VULN_TEMPLATES: &[VulnTemplate] = &[
    VulnTemplate {
        body: "static void $fn(struct $T *$obj, int $len)\n{\n\tint $d;\n\t$d = $c1($obj->$f1) * ($M1 / $M2);\n$guard\t$c2($obj, $d);\n}\n",
        guard: "\tif (!$d)\n\t\t$d = 1;\n",
    },
    VulnTemplate {
        body: "static int $fn(struct $T *$obj)\n{\n\tint $d = $obj->$f1;\n$guard\treturn $obj->$f2 % $d;\n}\n",
        guard: "\tif (!$d)\n\t\treturn 0;\n",
    },
    VulnTemplate {
        body: "int $fn(struct $T *$obj, unsigned int $len)\n{\n\tunsigned int $d;\n\t$d = $len / 4;\n$guard\t$obj->$f1 = $obj->$f2 / $d;\n\treturn 0;\n}\n",
        guard: "\tif ($d == 0)\n\t\t$d = 1;\n",
    },
    VulnTemplate {
        body: "static void $fn(struct $T *$obj)\n{\n\tint $d = $c1($obj);\n$guard\t$obj->$f1 = $M1 / $d;\n}\n",
        guard: "\tif ($d <= 0)\n\t\treturn;\n",
    },
];

const BENIGN_TEMPLATES: &[&str] = &[
    "static void $fn(struct $T *$obj)\n{\n\t$obj->$f1 = 1;\n\tif (!$c1(&$obj->$f2, $M1 + 16))\n\t\t$c2(&$obj->$f3);\n}\n",
    "int $fn(struct $T *$obj)\n{\n\t$c1(&$obj->$f1);\n\t$obj->$f2++;\n\t$c2(&$obj->$f1);\n\treturn 0;\n}\n",
    "void $fn(struct $T *$obj, int $n)\n{\n\tint $i;\n\tfor ($i = 0; $i < $n; $i++)\n\t\t$obj->$f1[$i] = 0;\n}\n",
    "static int $fn(const struct $T *$obj)\n{\n\treturn $obj->$f1;\n}\n",
    "int $fn(struct $T *$obj, int $len)\n{\n\tif ($len > 64)\n\t\treturn -1;\n\t$obj->$f1 = $len;\n\treturn 0;\n}\n",
];

const SENTINEL_TEMPLATE: &str = "static void $fn(struct $T *$obj)\n{\n\t$sentinel($obj);\n}\n";

/// One generated function with its ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedFunction {
    pub name: String,
    pub source: String,
    /// Guarded version, for vulnerable functions.
    pub fixed_source: Option<String>,
    /// Every identifier spelling used, with the role it plays.
    pub roles: Vec<(String, IdentRole)>,
    /// Names of called functions (macros invoked with `(` included).
    pub calls: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedComponent {
    pub source: String,
    pub fixed_source: Option<String>,
    pub functions: Vec<GeneratedFunction>,
    pub includes: Vec<String>,
}

fn placeholder_role(name: &str) -> Option<(IdentRole, &'static [&'static str])> {
    Some(match name {
        "fn" => (IdentRole::FunctionName, FUNCTION_NAMES),
        "c1" | "c2" => (IdentRole::FunctionName, CALL_NAMES),
        "T" => (IdentRole::TypeName, TYPE_NAMES),
        "obj" | "d" | "len" | "n" | "i" => (IdentRole::VariableName, VAR_NAMES),
        "f1" | "f2" | "f3" => (IdentRole::VariableName, FIELD_NAMES),
        "M1" | "M2" => (IdentRole::VariableName, MACRO_NAMES),
        _ => return None,
    })
}

/// Produces C functions and components from the template families.
pub struct SourceGenerator {
    rng: ChaCha8Rng,
    skew: f64,
}

impl SourceGenerator {
    pub fn new(seed: u64, skew: f64) -> Self {
        SourceGenerator { rng: ChaCha8Rng::seed_from_u64(seed), skew }
    }

    fn from_rng(rng: ChaCha8Rng, skew: f64) -> Self {
        SourceGenerator { rng, skew }
    }

    /// Index in `0..k` with probability proportional to `1 / (i + 1)^skew`.
    fn zipf(&mut self, k: usize) -> usize {
        let weights: Vec<f64> = (0..k).map(|i| 1.0 / ((i + 1) as f64).powf(self.skew)).collect();
        let total: f64 = weights.iter().sum();
        let mut x = self.rng.gen::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                return i;
            }
            x -= w;
        }
        k - 1
    }

    /// Fills the placeholders of `templates` (all sharing one binding).
    fn instantiate(&mut self, templates: &[&str]) -> (Vec<String>, GeneratedFunction) {
        let mut bindings: BTreeMap<String, String> = BTreeMap::new();
        let mut used: HashSet<&'static str> = HashSet::new();
        let mut roles = Vec::new();
        let mut calls = Vec::new();
        let mut outputs = Vec::new();
        for template in templates {
            let mut out = String::new();
            let mut rest: &str = template;
            while let Some(pos) = rest.find('$') {
                out.push_str(&rest[..pos]);
                let tail = &rest[pos + 1..];
                let end = tail
                    .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                    .unwrap_or(tail.len());
                let key = &tail[..end];
                let value = if let Some(v) = bindings.get(key) {
                    v.clone()
                } else {
                    let v = match key {
                        "sentinel" => {
                            calls.push(SENTINEL_CALL.to_string());
                            roles.push((SENTINEL_CALL.to_string(), IdentRole::FunctionName));
                            SENTINEL_CALL.to_string()
                        }
                        "guard" => String::new(),
                        _ => {
                            let (role, pool) = placeholder_role(key)
                                .unwrap_or_else(|| panic!("unknown placeholder ${key}"));
                            let free: Vec<&'static str> =
                                pool.iter().copied().filter(|n| !used.contains(n)).collect();
                            let pick = *free.choose(&mut self.rng).expect("name pool exhausted");
                            used.insert(pick);
                            roles.push((pick.to_string(), role));
                            if key.starts_with('c') {
                                calls.push(pick.to_string());
                            }
                            pick.to_string()
                        }
                    };
                    bindings.insert(key.to_string(), v.clone());
                    v
                };
                out.push_str(&value);
                rest = &tail[end..];
            }
            out.push_str(rest);
            outputs.push(out);
        }
        let name = bindings.get("fn").cloned().unwrap_or_default();
        let function = GeneratedFunction {
            name,
            source: outputs[0].clone(),
            fixed_source: None,
            roles,
            calls,
        };
        (outputs, function)
    }

    pub fn vulnerable_function(&mut self) -> GeneratedFunction {
        let t = &VULN_TEMPLATES[self.zipf(VULN_TEMPLATES.len())];
        let fixed = t.body.replace("$guard", t.guard);
        let (outputs, mut function) = self.instantiate(&[t.body, &fixed]);
        function.fixed_source = Some(outputs[1].clone());
        function
    }

    /// An already-guarded function: the fixed form of a vulnerable template.
    pub fn guarded_function(&mut self) -> GeneratedFunction {
        let t = &VULN_TEMPLATES[self.zipf(VULN_TEMPLATES.len())];
        let fixed = t.body.replace("$guard", t.guard);
        self.instantiate(&[&fixed]).1
    }

    pub fn benign_function(&mut self) -> GeneratedFunction {
        let t = BENIGN_TEMPLATES[self.zipf(BENIGN_TEMPLATES.len())];
        self.instantiate(&[t]).1
    }

    fn sentinel_function(&mut self) -> GeneratedFunction {
        self.instantiate(&[SENTINEL_TEMPLATE]).1
    }

    /// A component of 2–4 functions. Vulnerable components contain exactly
    /// one unguarded function.
    pub fn component(&mut self, vulnerable: bool, planted: Option<PlantedSignal>) -> GeneratedComponent {
        let mut functions = Vec::new();
        if vulnerable {
            functions.push(self.vulnerable_function());
            for _ in 0..self.rng.gen_range(1..=2) {
                functions.push(self.benign_function());
            }
        } else {
            for _ in 0..self.rng.gen_range(2..=3) {
                if self.rng.gen_bool(0.3) {
                    functions.push(self.guarded_function());
                } else {
                    functions.push(self.benign_function());
                }
            }
        }
        // Function names must be unique within a file; deduplicating before
        // the shuffle keeps the vulnerable function, which comes first.
        let mut seen = HashSet::new();
        functions.retain(|f| seen.insert(f.name.clone()));
        functions.shuffle(&mut self.rng);
        if vulnerable && planted == Some(PlantedSignal::Call) {
            let mut sentinel = self.sentinel_function();
            while seen.contains(&sentinel.name) {
                sentinel = self.sentinel_function();
            }
            functions.push(sentinel);
        }

        let n_includes = self.rng.gen_range(1..=3);
        let mut includes: Vec<String> = HEADERS
            .choose_multiple(&mut self.rng, n_includes)
            .map(|h| h.to_string())
            .collect();
        includes.sort();
        let mut prelude: String = includes.iter().map(|h| format!("#include <{h}>\n")).collect();
        prelude.push('\n');
        if vulnerable && planted == Some(PlantedSignal::Token) {
            prelude.push_str(&format!("static int {SENTINEL_TOKEN};\n\n"));
        }
        let join = |fixed: bool| {
            let mut text = prelude.clone();
            for (k, f) in functions.iter().enumerate() {
                if k > 0 {
                    text.push('\n');
                }
                let body = if fixed { f.fixed_source.as_ref().unwrap_or(&f.source) } else { &f.source };
                text.push_str(body);
            }
            text
        };
        let source = join(false);
        let fixed_source = vulnerable.then(|| join(true));
        GeneratedComponent { source, fixed_source, functions, includes }
    }
}

/// `n` generated functions (vulnerable, guarded and benign) with their
/// ground-truth identifier roles.
pub fn annotated_function_roles(seed: u64, n: usize) -> Vec<GeneratedFunction> {
    let mut gen = SourceGenerator::new(seed, 0.0);
    (0..n)
        .map(|i| match i % 3 {
            0 => gen.vulnerable_function(),
            1 => gen.guarded_function(),
            _ => gen.benign_function(),
        })
        .collect()
}

/// Builds a corpus as a pure function of `(seed, spec)`.
pub fn generate_synthetic_corpus(seed: u64, spec: &SynthesisSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = SourceGenerator::from_rng(ChaCha8Rng::seed_from_u64(rng.gen()), spec.vocabulary_skew);
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let n_vuln = spec.vulnerable_per_release();
    let n_total = spec.components_per_release;
    if n_vuln == 0 || n_vuln >= n_total {
        return Err(Error::Config(format!(
            "vuln_fraction {} of {} components gives {} vulnerable components",
            spec.vuln_fraction, n_total, n_vuln
        )));
    }

    let mut releases: Vec<Release> = Vec::new();
    let mut vulns: Vec<VulnerabilityRecord> = Vec::new();
    let mut vuln_index: HashMap<String, usize> = HashMap::new();
    let mut next_path = 0usize;
    let mut fresh_path = |rng: &mut ChaCha8Rng| {
        const DIRS: &[&str] = &["net/ipv4", "net/core", "drivers/net", "net/sched", "net/bridge"];
        let dir = DIRS[rng.gen_range(0..DIRS.len())];
        next_path += 1;
        format!("{dir}/comp_{next_path:04}.c")
    };

    for r in 0..spec.n_releases {
        let date = start + Duration::days(spec.release_spacing_days * r as i64);
        let name = format!("1.{r}");
        let mut components: Vec<ComponentRecord> = Vec::new();

        if let Some(prev) = releases.last() {
            for c in &prev.components {
                let carried_vuln = components.iter().filter(|c| c.is_vulnerable()).count();
                let carried_clean = components.len() - carried_vuln;
                let keep = if c.is_vulnerable() {
                    rng.gen_bool(spec.persistence) && carried_vuln < n_vuln
                } else {
                    rng.gen_bool(0.5) && carried_clean < n_total - n_vuln
                };
                if keep {
                    components.push(c.clone());
                }
            }
        }
        while components.iter().filter(|c| c.is_vulnerable()).count() < n_vuln {
            let path = fresh_path(&mut rng);
            let generated = gen.component(true, spec.planted_signal);
            let id = format!("SYN-{}-{:04}", 2020 + r / 4, vulns.len() + 1);
            let lag = spec.detection_lag_days;
            let jitter = if lag >= 4 { rng.gen_range(-(lag / 4)..=lag / 4) } else { 0 };
            vuln_index.insert(id.clone(), vulns.len());
            vulns.push(VulnerabilityRecord {
                vuln_id: id.clone(),
                detection_date: date + Duration::days(lag + jitter),
                affected_paths: Vec::new(),
            });
            components.push(ComponentRecord::vulnerable(
                path,
                generated.source,
                generated.fixed_source.expect("vulnerable components have fixes"),
                vec![id],
            ));
        }
        while components.len() < n_total {
            let path = fresh_path(&mut rng);
            let generated = gen.component(false, spec.planted_signal);
            components.push(ComponentRecord::non_vulnerable(path, generated.source));
        }
        components.sort_by(|a, b| a.path.cmp(&b.path));
        for c in components.iter().filter(|c| c.is_vulnerable()) {
            for id in &c.vuln_ids {
                vulns[vuln_index[id]].affected_paths.push((name.clone(), c.path.clone()));
            }
        }
        releases.push(Release { name, release_date: date, components });
    }

    let corpus = Corpus { project_name: "synthetic".into(), releases, vulnerabilities: vulns };
    corpus.validate()?;
    Ok(corpus)
}
