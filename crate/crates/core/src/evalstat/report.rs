use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bootstrap::{compare, mu_delta_rel, paired_bootstrap_with, percentile, IndexPlan, SeMode, SeededPlan};
use super::outcomes::TaskSpec;
use super::select::SelectedOutcomes;
use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub baseline: String,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub se_mode: SeMode,
    /// Row order after the baseline; unlisted methods follow alphabetically.
    #[serde(default)]
    pub method_order: Vec<String>,
    /// Column order; unlisted tasks follow, non-summary tasks first.
    #[serde(default)]
    pub task_order: Vec<String>,
    /// Display names by method.
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}

impl ReportConfig {
    pub fn new(baseline: impl Into<String>) -> Self {
        ReportConfig {
            baseline: baseline.into(),
            resamples: DEFAULT_RESAMPLES,
            seed: 0,
            se_mode: SeMode::default(),
            method_order: Vec::new(),
            task_order: Vec::new(),
            labels: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCell {
    pub task: String,
    /// Bootstrap mean of the draws.
    pub mean: f64,
    pub se: f64,
    /// Percentile interval of the method's own draws.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Paired difference versus the baseline.
    pub delta_hat: f64,
    pub delta_ci: [f64; 2],
    pub significant: bool,
    pub p_value: f64,
    /// Relative change versus the baseline in percent, positive when better.
    pub rel_delta: f64,
    /// Selected checkpoint per seed.
    pub checkpoints: BTreeMap<u64, u64>,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub label: String,
    pub is_baseline: bool,
    pub mu_delta_rel: Option<f64>,
    pub best_mu_delta_rel: bool,
    pub cells: Vec<TaskCell>,
}

impl MethodRow {
    pub fn cell(&self, task: &str) -> Option<&TaskCell> {
        self.cells.iter().find(|c| c.task == task)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub baseline: String,
    pub resamples: usize,
    pub seed: u64,
    pub se_mode: SeMode,
    pub seeds: Vec<u64>,
    pub tasks: Vec<TaskSpec>,
    pub rows: Vec<MethodRow>,
}

pub fn build_report(selected: &SelectedOutcomes, cfg: &ReportConfig) -> Result<BootstrapReport> {
    build_report_with(selected, cfg, &SeededPlan(cfg.seed))
}

pub fn build_report_with(selected: &SelectedOutcomes, cfg: &ReportConfig, plan: &dyn IndexPlan) -> Result<BootstrapReport> {
    if cfg.resamples < 2 {
        return Err(Error::config("a report needs at least 2 bootstrap resamples"));
    }
    let base = cfg.baseline.as_str();
    if !selected.methods().contains(&base) {
        return Err(Error::config(format!("baseline `{base}` has no outcomes")));
    }
    let tasks = ordered_tasks(selected, &cfg.task_order)?;
    let methods = ordered_methods(selected, base, &cfg.method_order);
    let draws = paired_bootstrap_with(selected, cfg.resamples, plan)?;

    let mut base_means = BTreeMap::new();
    let mut rows = Vec::new();
    for m in &methods {
        let mut cells = Vec::new();
        for t in &tasks {
            let Some(d) = draws.get(m, &t.name) else { continue };
            if draws.get(base, &t.name).is_none() {
                return Err(Error::config(format!("baseline `{base}` lacks task `{}`", t.name)));
            }
            let s = super::bootstrap::summarize(d, cfg.se_mode)?;
            let mut sorted = d.to_vec();
            sorted.sort_by(f64::total_cmp);
            let c = compare(&draws, m, base, &t.name)?;
            if *m == base {
                base_means.insert(t.name.clone(), s.mean);
            }
            let checkpoints = selected
                .seeds(m, &t.name)
                .into_iter()
                .map(|seed| (seed, selected.checkpoint(m, &t.name, seed).expect("seed listed")))
                .collect();
            cells.push(TaskCell {
                task: t.name.clone(),
                mean: s.mean,
                se: s.se,
                ci_low: percentile(&sorted, 0.025),
                ci_high: percentile(&sorted, 0.975),
                delta_hat: c.delta_hat,
                delta_ci: [c.ci_low, c.ci_high],
                significant: c.significant,
                p_value: c.p_value,
                rel_delta: 0.0,
                checkpoints,
                best: false,
            });
        }
        rows.push(MethodRow {
            method: m.to_string(),
            label: cfg.labels.get(*m).cloned().unwrap_or_else(|| m.to_string()),
            is_baseline: *m == base,
            mu_delta_rel: None,
            best_mu_delta_rel: false,
            cells,
        });
    }

    for row in &mut rows {
        let mut rels = Vec::new();
        for cell in &mut row.cells {
            let spec = tasks.iter().find(|t| t.name == cell.task).expect("known task");
            cell.rel_delta = spec.relative_delta(cell.mean, base_means[&cell.task]);
            if spec.in_mu_delta_rel {
                rels.push(cell.rel_delta);
            }
        }
        if !row.is_baseline && !rels.is_empty() {
            row.mu_delta_rel = Some(mu_delta_rel(&rels)?);
        }
    }

    for t in &tasks {
        let means = rows.iter().filter_map(|r| r.cell(&t.name).map(|c| c.mean));
        let best = means.reduce(|a, b| if t.direction.better(b, a) { b } else { a });
        for row in &mut rows {
            if let Some(cell) = row.cells.iter_mut().find(|c| c.task == t.name) {
                cell.best = Some(cell.mean) == best;
            }
        }
    }
    let best_rel = rows.iter().filter_map(|r| r.mu_delta_rel).reduce(f64::max);
    for row in &mut rows {
        row.best_mu_delta_rel = best_rel.is_some() && row.mu_delta_rel == best_rel;
    }

    let mut seeds: Vec<u64> = selected.cells.keys().map(|k| k.2).collect();
    seeds.sort_unstable();
    seeds.dedup();
    Ok(BootstrapReport {
        baseline: base.to_string(),
        resamples: cfg.resamples,
        seed: cfg.seed,
        se_mode: cfg.se_mode,
        seeds,
        tasks,
        rows,
    })
}

fn ordered_tasks(selected: &SelectedOutcomes, order: &[String]) -> Result<Vec<TaskSpec>> {
    let mut out = Vec::new();
    for name in order {
        let t = selected.tasks.get(name).ok_or_else(|| Error::config(format!("unknown task `{name}` in task order")))?;
        out.push(t.clone());
    }
    let mut rest: Vec<&TaskSpec> = selected.tasks.values().filter(|t| !order.contains(&t.name)).collect();
    rest.sort_by_key(|t| (t.in_mu_delta_rel, t.name.clone()));
    out.extend(rest.into_iter().cloned());
    Ok(out)
}

fn ordered_methods<'a>(selected: &'a SelectedOutcomes, base: &'a str, order: &[String]) -> Vec<&'a str> {
    let all = selected.methods();
    let mut out = vec![base];
    for m in order {
        if let Some(&found) = all.iter().find(|a| **a == m.as_str()) {
            if !out.contains(&found) {
                out.push(found);
            }
        }
    }
    for m in all {
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

fn value_pm(cell: &TaskCell, scale: f64) -> String {
    format!("{:.2}±{:.2}", cell.mean * scale, cell.se * scale)
}

impl BootstrapReport {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn cells_text(&self, bold: fn(&str) -> String, star: &str, pct: &str) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|row| {
                let mut line = vec![row.label.clone()];
                line.push(match row.mu_delta_rel {
                    None => "-".into(),
                    Some(v) if row.best_mu_delta_rel => bold(&format!("{v:.2}{pct}")),
                    Some(v) => format!("{v:.2}{pct}"),
                });
                for t in &self.tasks {
                    let Some(c) = row.cell(&t.name) else {
                        line.push("-".into());
                        continue;
                    };
                    let mut s = value_pm(c, t.display_scale);
                    if c.best {
                        s = bold(&s);
                    }
                    if !row.is_baseline {
                        if c.significant {
                            s.push_str(star);
                        }
                        write!(s, " ({:.2}{pct})", c.rel_delta).unwrap();
                    }
                    line.push(s);
                }
                line
            })
            .collect()
    }

    fn header(&self, arrow_up: &str, arrow_down: &str, mu: &str) -> Vec<String> {
        let mut h = vec!["Name".to_string(), format!("{mu}{arrow_up}")];
        for t in &self.tasks {
            let a = match t.direction {
                super::Direction::HigherBetter => arrow_up,
                super::Direction::LowerBetter => arrow_down,
            };
            h.push(format!("{}{a}", t.name));
        }
        h
    }

    /// Markdown table: `**x±se**` marks the best value per column, `^*` a
    /// significant difference versus the baseline.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let header = self.header("↑", "↓", "μΔREL");
        writeln!(out, "| {} |", header.join(" | ")).unwrap();
        writeln!(out, "|{}", "---|".repeat(header.len())).unwrap();
        for line in self.cells_text(|s| format!("**{s}**"), "^*", "%") {
            writeln!(out, "| {} |", line.join(" | ")).unwrap();
        }
        writeln!(
            out,
            "\nmean±se of {} bootstrap resamples over seeds {:?}; ^* significant vs {} (95% CI of the paired difference excludes 0); parentheses: relative change vs {}.",
            self.resamples,
            self.seeds,
            self.baseline_label(),
            self.baseline_label()
        )
        .unwrap();
        out
    }

    pub fn render_latex(&self) -> String {
        let mut out = String::new();
        let cols = format!("l|l|{}", "l".repeat(self.tasks.len()));
        writeln!(out, "\\begin{{tabular}}{{{cols}}}\n\\toprule").unwrap();
        let header: Vec<String> = self
            .header("$\\uparrow$", "$\\downarrow$", "$\\mu_{\\Delta \\mathrm{REL}}$")
            .into_iter()
            .map(|h| latex_escape(&h))
            .collect();
        writeln!(out, "{} \\\\\n\\midrule", header.join(" & ")).unwrap();
        let lines = self.cells_text(|s| format!("\\textbf{{{s}}}"), "$^{*}$", "\\%");
        for (i, line) in lines.into_iter().enumerate() {
            let line: Vec<String> = line
                .into_iter()
                .enumerate()
                .map(|(j, s)| if j == 0 { latex_escape(&s) } else { s.replace('±', "$\\pm$") })
                .collect();
            writeln!(out, "{} \\\\", line.join(" & ")).unwrap();
            if i == 0 {
                writeln!(out, "\\midrule").unwrap();
            }
        }
        writeln!(out, "\\bottomrule\n\\end{{tabular}}").unwrap();
        out
    }

    /// One line per method and task.
    pub fn render_csv(&self) -> String {
        let mut out = String::from(
            "method,task,mean,se,ci_low,ci_high,delta_hat,delta_ci_low,delta_ci_high,p_value,significant,rel_delta_pct,best,mu_delta_rel\n",
        );
        for row in &self.rows {
            for c in &row.cells {
                let mu = row.mu_delta_rel.map(|v| v.to_string()).unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    csv_field(&row.method),
                    csv_field(&c.task),
                    c.mean,
                    c.se,
                    c.ci_low,
                    c.ci_high,
                    c.delta_hat,
                    c.delta_ci[0],
                    c.delta_ci[1],
                    c.p_value,
                    c.significant,
                    c.rel_delta,
                    c.best,
                    mu
                )
                .unwrap();
            }
        }
        out
    }

    fn baseline_label(&self) -> &str {
        self.row(&self.baseline).map_or(&self.baseline, |r| &r.label)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn latex_escape(s: &str) -> String {
    if s.contains('$') {
        return s.to_string();
    }
    s.replace('\\', "\\textbackslash{}").replace('_', "\\_").replace('%', "\\%").replace('&', "\\&").replace('#', "\\#")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalstat::outcomes::OutcomeMatrix;
    use crate::evalstat::select::select_checkpoints;

    fn fixture() -> SelectedOutcomes {
        let mut m = OutcomeMatrix::new([TaskSpec::perplexity(), TaskSpec::accuracy("pairs")]);
        for seed in 0..3u64 {
            let ppl = |base: f64| (0..40).map(|i| base + 0.01 * ((i * 7 + seed as usize) % 11) as f64).collect();
            m.insert("base", "perplexity", seed, 1, ppl(3.2)).unwrap();
            m.insert("mix", "perplexity", seed, 1, ppl(3.1)).unwrap();
            let acc = |k: usize| (0..40).map(|i| if (i + seed as usize) % 10 < k { 1.0 } else { 0.0 }).collect();
            m.insert("base", "pairs", seed, 1, acc(6)).unwrap();
            m.insert("mix", "pairs", seed, 1, acc(6)).unwrap();
        }
        select_checkpoints(&m).unwrap()
    }

    #[test]
    fn report_marks_and_orders() {
        let r = build_report(&fixture(), &ReportConfig::new("base")).unwrap();
        assert_eq!(r.rows[0].method, "base");
        assert_eq!(r.tasks[0].name, "perplexity");
        let mix = r.row("mix").unwrap();
        let ppl = mix.cell("perplexity").unwrap();
        assert!(ppl.significant && ppl.best && ppl.rel_delta > 0.0);
        let pairs = mix.cell("pairs").unwrap();
        assert!(!pairs.significant && pairs.rel_delta == 0.0 && pairs.best);
        assert_eq!(mix.mu_delta_rel, Some(0.0));
        assert!(r.row("base").unwrap().mu_delta_rel.is_none());
        let table = r.render_table();
        assert!(table.contains("| base | - |"), "{table}");
        assert!(table.contains("^* ("), "{table}");
        for row in &r.rows {
            for c in &row.cells {
                assert!(c.ci_low <= c.mean && c.mean <= c.ci_high);
                assert!(c.p_value >= 1.0 / (r.resamples + 1) as f64 && c.p_value <= 1.0);
            }
        }
    }

    #[test]
    fn report_is_reproducible_and_round_trips() {
        let cfg = ReportConfig::new("base");
        let a = build_report(&fixture(), &cfg).unwrap();
        let b = build_report(&fixture(), &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(BootstrapReport::from_json(&a.to_json().unwrap()).unwrap(), a);
    }

    #[test]
    fn missing_baseline_is_a_config_error() {
        assert!(matches!(build_report(&fixture(), &ReportConfig::new("nope")), Err(Error::Config(_))));
    }

    #[test]
    fn csv_quotes_awkward_names() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
