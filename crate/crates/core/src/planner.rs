//! Qualitative knowledge base and planner.
//!
//! Rules such as "IF vaporizer pressure increases THEN PC130 closes PCV101"
//! become signed edges of an influence graph. Diagnosis chains backwards
//! from observed deviations to unobserved causes; planning searches for
//! manipulable elements with a signed path to the goal variable; every
//! result carries the rules (and their document references) it relied on.
//!
//! Rule file grammar, one statement per line, `#` starts a comment line:
//!
//! ```text
//! IF <var> <inc|dec> THEN <var> <inc|dec> [KIND process|control] [SRC "<doc ref>"]
//! SENSED <var>[, <var>...]
//! MANIPULABLE <var>[, <var>...]
//! ```
//!
//! Variable names may contain spaces; the direction word closest to `THEN`
//! (or to the end of the consequent) terminates the name.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three plant knowledge items of the feed section.
pub const FEED_SECTION_RULES: &str = include_str!("../knowledge/feed_section.rules");

/// Feed-section knowledge base used for MAL03: the three items above plus
/// the P&ID and loop-sheet relations connecting the setpoints to the vaporizer.
pub const MAL03_RULES: &str = include_str!("../knowledge/mal03.rules");

/// Longest path, in edges, considered by diagnosis and planning.
pub const MAX_PATH_EDGES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("variable {0:?} is not tagged SENSED")]
    NotSensed(String),
    #[error("contradictory deviations for {0:?}")]
    Contradiction(String),
    #[error("no manipulable element has a signed path to {0:?}")]
    NoPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dir {
    #[serde(rename = "+")]
    Inc,
    #[serde(rename = "-")]
    Dec,
}

impl Dir {
    pub fn flip(self) -> Self {
        match self {
            Dir::Inc => Dir::Dec,
            Dir::Dec => Dir::Inc,
        }
    }

    /// Direction after passing through an edge of the given sign.
    pub fn through(self, sign: Sign) -> Self {
        match sign {
            Sign::Pos => self,
            Sign::Neg => self.flip(),
        }
    }

    fn parse(word: &str) -> Option<Self> {
        match word {
            "inc" | "increases" | "+" => Some(Dir::Inc),
            "dec" | "decreases" | "-" => Some(Dir::Dec),
            _ => None,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Dir::Inc => '+',
            Dir::Dec => '-',
        }
    }

    fn verb(self) -> &'static str {
        match self {
            Dir::Inc => "increases",
            Dir::Dec => "decreases",
        }
    }
}

impl std::str::FromStr for Dir {
    type Err = PlannerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dir::parse(s).ok_or_else(|| PlannerError::Syntax {
            line: 0,
            message: format!("expected +/- or inc/dec, got {s:?}"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Pos,
    #[serde(rename = "-")]
    Neg,
}

impl Sign {
    pub fn product(self, other: Sign) -> Sign {
        if self == other {
            Sign::Pos
        } else {
            Sign::Neg
        }
    }

    fn of(a: Dir, b: Dir) -> Sign {
        if a == b {
            Sign::Pos
        } else {
            Sign::Neg
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Process,
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfluenceRule {
    pub antecedent: (String, Dir),
    pub consequent: (String, Dir),
    pub kind: RuleKind,
    pub source: String,
    pub line: usize,
}

impl InfluenceRule {
    pub fn sign(&self) -> Sign {
        Sign::of(self.antecedent.1, self.consequent.1)
    }
}

impl fmt::Display for InfluenceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "IF {} {} THEN {} {}",
            self.antecedent.0,
            self.antecedent.1.verb(),
            self.consequent.0,
            self.consequent.1.verb()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeTag {
    Sensed,
    Manipulable,
    Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub sign: Sign,
    pub rule: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

/// Signed directed multigraph; one edge per accepted rule.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InfluenceGraph {
    names: Vec<String>,
    tags: Vec<NodeTag>,
    index: BTreeMap<String, usize>,
    rules: Vec<InfluenceRule>,
    edges: Vec<Edge>,
    outgoing: Vec<Vec<usize>>,
    pub warnings: Vec<ParseWarning>,
}

impl InfluenceGraph {
    fn node(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.tags.push(NodeTag::Latent);
        self.outgoing.push(Vec::new());
        self.index.insert(name.to_string(), i);
        i
    }

    fn add_rule(&mut self, rule: InfluenceRule) {
        let from = self.node(&rule.antecedent.0);
        let to = self.node(&rule.consequent.0);
        let sign = rule.sign();
        if let Some(existing) = self
            .edges
            .iter()
            .find(|e| e.from == from && e.to == to && e.sign == sign)
        {
            let first = self.rules[existing.rule].line;
            self.warnings.push(ParseWarning {
                line: rule.line,
                message: format!("duplicate of the rule on line {first}; ignored"),
            });
            return;
        }
        let id = self.rules.len();
        self.rules.push(rule);
        self.outgoing[from].push(self.edges.len());
        self.edges.push(Edge { from, to, sign, rule: id });
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn rules(&self) -> &[InfluenceRule] {
        &self.rules
    }

    pub fn rule(&self, id: usize) -> &InfluenceRule {
        &self.rules[id]
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn tag(&self, name: &str) -> Option<NodeTag> {
        self.id(name).map(|i| self.tags[i])
    }

    pub fn manipulables(&self) -> BTreeSet<String> {
        self.names_with(NodeTag::Manipulable)
    }

    pub fn sensed(&self) -> BTreeSet<String> {
        self.names_with(NodeTag::Sensed)
    }

    fn names_with(&self, tag: NodeTag) -> BTreeSet<String> {
        self.names
            .iter()
            .zip(&self.tags)
            .filter(|(_, t)| **t == tag)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Edge between two named nodes with the given sign, if any.
    pub fn edge_sign(&self, from: &str, to: &str) -> Vec<Sign> {
        match (self.id(from), self.id(to)) {
            (Some(a), Some(b)) => self
                .edges
                .iter()
                .filter(|e| e.from == a && e.to == b)
                .map(|e| e.sign)
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Every simple path (as edge ids) from `start` to `goal` with at most
    /// `max_edges` edges.
    pub fn simple_paths(&self, start: usize, goal: usize, max_edges: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        if start == goal {
            return out;
        }
        let mut visited = vec![false; self.names.len()];
        let mut path = Vec::new();
        visited[start] = true;
        self.dfs(start, goal, max_edges, &mut visited, &mut path, &mut out);
        out
    }

    fn dfs(
        &self,
        at: usize,
        goal: usize,
        budget: usize,
        visited: &mut [bool],
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if budget == 0 {
            return;
        }
        for &e in &self.outgoing[at] {
            let next = self.edges[e].to;
            if visited[next] {
                continue;
            }
            path.push(e);
            if next == goal {
                out.push(path.clone());
            } else {
                visited[next] = true;
                self.dfs(next, goal, budget - 1, visited, path, out);
                visited[next] = false;
            }
            path.pop();
        }
    }

    pub fn path_sign(&self, path: &[usize]) -> Sign {
        path.iter()
            .fold(Sign::Pos, |acc, &e| acc.product(self.edges[e].sign))
    }

    /// Order-independent sort key: length, then visited names, then signs.
    fn path_key(&self, path: &[usize]) -> (usize, Vec<&str>, Vec<Sign>) {
        let names = path.iter().map(|&e| self.name(self.edges[e].to)).collect();
        let signs = path.iter().map(|&e| self.edges[e].sign).collect();
        (path.len(), names, signs)
    }

    fn shortest<'a>(&self, paths: &'a [Vec<usize>]) -> Option<&'a Vec<usize>> {
        paths.iter().min_by(|a, b| self.path_key(a).cmp(&self.path_key(b)))
    }
}

/// Parses a rule file into an influence graph.
pub fn parse_rules(text: &str) -> Result<InfluenceGraph, PlannerError> {
    let mut g = InfluenceGraph::default();
    let mut tags: Vec<(usize, String, NodeTag)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let keyword = line.split_whitespace().next().unwrap_or_default();
        match keyword {
            "IF" => g.add_rule(parse_rule_line(line, line_no)?),
            "SENSED" | "MANIPULABLE" => {
                let tag = if keyword == "SENSED" {
                    NodeTag::Sensed
                } else {
                    NodeTag::Manipulable
                };
                let rest = line[keyword.len()..].trim();
                if rest.is_empty() {
                    return Err(syntax(line_no, format!("{keyword} needs at least one variable")));
                }
                for name in rest.split(',').map(str::trim) {
                    if name.is_empty() {
                        return Err(syntax(line_no, "empty variable name".into()));
                    }
                    tags.push((line_no, name.to_string(), tag));
                }
            }
            other => return Err(syntax(line_no, format!("unexpected statement {other:?}"))),
        }
    }
    for (line, name, tag) in tags {
        let node = g.node(&name);
        let current = g.tags[node];
        if current != NodeTag::Latent && current != tag {
            return Err(syntax(line, format!("{name:?} tagged both sensed and manipulable")));
        }
        g.tags[node] = tag;
    }
    Ok(g)
}

fn syntax(line: usize, message: String) -> PlannerError {
    PlannerError::Syntax { line, message }
}

fn parse_rule_line(line: &str, line_no: usize) -> Result<InfluenceRule, PlannerError> {
    let (body, source) = match line.find("SRC") {
        Some(pos) if line[pos + 3..].trim_start().starts_with('"') => {
            let quoted = line[pos + 3..].trim();
            let inner = &quoted[1..];
            let end = inner
                .rfind('"')
                .ok_or_else(|| syntax(line_no, "unterminated SRC string".into()))?;
            if !inner[end + 1..].trim().is_empty() {
                return Err(syntax(line_no, "text after SRC string".into()));
            }
            (&line[..pos], inner[..end].to_string())
        }
        Some(_) => return Err(syntax(line_no, "SRC must be followed by a quoted string".into())),
        None => (line, String::new()),
    };
    let tokens: Vec<&str> = body.split_whitespace().collect();
    let then = tokens
        .iter()
        .position(|t| *t == "THEN")
        .ok_or_else(|| syntax(line_no, "missing THEN".into()))?;
    let (consequent_end, kind) = match tokens.iter().position(|t| *t == "KIND") {
        Some(k) if k > then => {
            let kind = match tokens.get(k + 1) {
                Some(&"process") => RuleKind::Process,
                Some(&"control") => RuleKind::Control,
                other => return Err(syntax(line_no, format!("bad KIND {other:?}"))),
            };
            if tokens.len() > k + 2 {
                return Err(syntax(line_no, "unexpected tokens after KIND".into()));
            }
            (k, kind)
        }
        Some(_) => return Err(syntax(line_no, "KIND before THEN".into())),
        None => (tokens.len(), RuleKind::Process),
    };
    let antecedent = parse_term(&tokens[1..then], line_no, "antecedent")?;
    let consequent = parse_term(&tokens[then + 1..consequent_end], line_no, "consequent")?;
    Ok(InfluenceRule {
        antecedent,
        consequent,
        kind,
        source,
        line: line_no,
    })
}

fn parse_term(tokens: &[&str], line_no: usize, what: &str) -> Result<(String, Dir), PlannerError> {
    let (last, name) = tokens
        .split_last()
        .ok_or_else(|| syntax(line_no, format!("empty {what}")))?;
    let dir = Dir::parse(last)
        .ok_or_else(|| syntax(line_no, format!("{what} must end with inc or dec, got {last:?}")))?;
    if name.is_empty() {
        return Err(syntax(line_no, format!("{what} has no variable")));
    }
    Ok((name.join(" "), dir))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deviation {
    pub variable: String,
    pub direction: Dir,
}

impl Deviation {
    pub fn new(variable: impl Into<String>, direction: Dir) -> Self {
        Self {
            variable: variable.into(),
            direction,
        }
    }
}

impl std::str::FromStr for Deviation {
    type Err = PlannerError;

    /// `FI101:+` or `vaporizer_pressure:-`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (var, dir) = s
            .rsplit_once(':')
            .ok_or_else(|| syntax(0, format!("expected <var>:<+|->, got {s:?}")))?;
        Ok(Self::new(var.trim(), dir.trim().parse()?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootCause {
    pub variable: String,
    pub direction: Dir,
    /// Deviations this cause accounts for, in input order.
    pub explains: Vec<String>,
    /// Sum over explained deviations of the shortest path length.
    pub path_length: usize,
    /// For each explained deviation, rule ids from the cause to the deviation.
    pub chains: Vec<Vec<usize>>,
}

/// Backward chaining from observed deviations of sensed variables to
/// non-sensed causes. A rule set without any SENSED directive accepts a
/// deviation on any node and excludes only the deviating nodes as causes.
///
/// A cause explains a deviation when every simple path to it carries the
/// same sign and that sign maps the cause direction onto the observed one.
/// Causes contradicted by any explained deviation are dropped. Ranking:
/// more deviations explained, then shorter total path, then name.
pub fn diagnose(g: &InfluenceGraph, deviations: &[Deviation]) -> Result<Vec<RootCause>, PlannerError> {
    let untagged = !g.tags.contains(&NodeTag::Sensed);
    let mut seen: BTreeMap<&str, Dir> = BTreeMap::new();
    let mut targets = Vec::new();
    for d in deviations {
        let id = g
            .id(&d.variable)
            .ok_or_else(|| PlannerError::UnknownVariable(d.variable.clone()))?;
        if !untagged && g.tags[id] != NodeTag::Sensed {
            return Err(PlannerError::NotSensed(d.variable.clone()));
        }
        match seen.get(d.variable.as_str()) {
            Some(&dir) if dir != d.direction => {
                return Err(PlannerError::Contradiction(d.variable.clone()))
            }
            Some(_) => continue,
            None => {
                seen.insert(&d.variable, d.direction);
                targets.push((id, d));
            }
        }
    }

    let mut causes = Vec::new();
    'candidates: for c in 0..g.node_count() {
        if g.tags[c] == NodeTag::Sensed || targets.iter().any(|&(v, _)| v == c) {
            continue;
        }
        let mut direction: Option<Dir> = None;
        let mut explains = Vec::new();
        let mut chains = Vec::new();
        let mut path_length = 0;
        for &(v, dev) in &targets {
            let paths = g.simple_paths(c, v, MAX_PATH_EDGES);
            let Some(first) = paths.first() else { continue };
            let sign = g.path_sign(first);
            if paths.iter().any(|p| g.path_sign(p) != sign) {
                continue;
            }
            let implied = dev.direction.through(sign);
            match direction {
                Some(d) if d != implied => continue 'candidates,
                _ => direction = Some(implied),
            }
            let best = g.shortest(&paths).expect("non-empty");
            path_length += best.len();
            chains.push(best.iter().map(|&e| g.edges[e].rule).collect());
            explains.push(dev.variable.clone());
        }
        if let Some(direction) = direction {
            causes.push(RootCause {
                variable: g.name(c).to_string(),
                direction,
                explains,
                path_length,
                chains,
            });
        }
    }
    causes.sort_by(|a, b| {
        b.explains
            .len()
            .cmp(&a.explains.len())
            .then(a.path_length.cmp(&b.path_length))
            .then(a.variable.cmp(&b.variable))
    });
    Ok(causes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub variable: String,
    /// Direction the variable must move to return to normal.
    pub restore: Dir,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub target: String,
    pub direction: Dir,
    /// Nodes from the target to the goal, inclusive.
    pub path: Vec<String>,
    pub sign: Sign,
    /// Rule ids along the path, target first.
    pub chain: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub goal: Goal,
    pub steps: Vec<PlanStep>,
}

impl Plan {
    pub fn targets(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.target.as_str()).collect()
    }
}

/// Finds every manipulable element with a signed path to the goal and the
/// direction in which to move it, ordered by path length then name.
pub fn plan(g: &InfluenceGraph, goal: &Goal, manipulables: &BTreeSet<String>) -> Result<Plan, PlannerError> {
    let goal_id = g
        .id(&goal.variable)
        .ok_or_else(|| PlannerError::UnknownVariable(goal.variable.clone()))?;
    let mut steps = Vec::new();
    for name in manipulables {
        let Some(m) = g.id(name) else { continue };
        let paths = g.simple_paths(m, goal_id, MAX_PATH_EDGES);
        let Some(best) = g.shortest(&paths) else { continue };
        let sign = g.path_sign(best);
        let mut path = vec![name.clone()];
        path.extend(best.iter().map(|&e| g.name(g.edges[e].to).to_string()));
        steps.push(PlanStep {
            target: name.clone(),
            direction: goal.restore.through(sign),
            path,
            sign,
            chain: best.iter().map(|&e| g.edges[e].rule).collect(),
        });
    }
    if steps.is_empty() {
        return Err(PlannerError::NoPlan(goal.variable.clone()));
    }
    steps.sort_by(|a, b| a.chain.len().cmp(&b.chain.len()).then(a.target.cmp(&b.target)));
    Ok(Plan {
        goal: goal.clone(),
        steps,
    })
}

/// Plans over the manipulables tagged in the rule file.
pub fn plan_tagged(g: &InfluenceGraph, goal: &Goal) -> Result<Plan, PlannerError> {
    plan(g, goal, &g.manipulables())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub rule: String,
    pub kind: RuleKind,
    pub source: String,
    pub line: usize,
}

impl Citation {
    fn of(rule: &InfluenceRule) -> Self {
        Self {
            rule: rule.to_string(),
            kind: rule.kind,
            source: rule.source.clone(),
            line: rule.line,
        }
    }

    fn render(&self) -> String {
        if self.source.is_empty() {
            format!("{} [{:?}, line {}]", self.rule, self.kind, self.line)
        } else {
            format!("{} [source: {}]", self.rule, self.source)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationStep {
    pub target: String,
    pub direction: Dir,
    /// Rules from the deviating goal variable back to the target.
    pub citations: Vec<Citation>,
    /// Control rules already reacting to the goal variable along this path.
    pub active_control: Vec<Citation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Explanation {
    pub steps: Vec<ExplanationStep>,
    pub text: String,
}

impl Explanation {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Renders the reasoning behind each plan step, citing the rule sources.
pub fn explain(p: &Plan, g: &InfluenceGraph) -> Explanation {
    if p.steps.is_empty() {
        return Explanation::default();
    }
    let goal_id = g.id(&p.goal.variable);
    let mut text = format!(
        "Goal: {} must {} to return to normal.\n",
        p.goal.variable,
        match p.goal.restore {
            Dir::Inc => "increase",
            Dir::Dec => "decrease",
        }
    );
    let mut steps = Vec::new();
    for (k, step) in p.steps.iter().enumerate() {
        let citations: Vec<Citation> = step
            .chain
            .iter()
            .rev()
            .map(|&r| Citation::of(g.rule(r)))
            .collect();
        let on_path: BTreeSet<&str> = step.path[..step.path.len() - 1]
            .iter()
            .map(String::as_str)
            .collect();
        let mut active_control: Vec<Citation> = g
            .edges()
            .iter()
            .filter(|e| Some(e.from) == goal_id && on_path.contains(g.name(e.to)))
            .map(|e| g.rule(e.rule))
            .filter(|r| r.kind == RuleKind::Control)
            .map(Citation::of)
            .collect();
        active_control.sort_by(|a, b| a.rule.cmp(&b.rule));

        let verb = match step.direction {
            Dir::Inc => "Increase",
            Dir::Dec => "Decrease",
        };
        text.push_str(&format!("Step {}: {} {}.\n", k + 1, verb, step.target));
        text.push_str(&format!("  Path: {}\n", step.path.join(" -> ")));
        let mut moving = p.goal.restore;
        for (i, (c, &r)) in citations.iter().zip(step.chain.iter().rev()).enumerate() {
            let rule = g.rule(r);
            let upstream = moving.through(rule.sign());
            text.push_str(&format!(
                "  {}. {} {} requires {} to {}: {}\n",
                i + 1,
                rule.consequent.0,
                if moving == Dir::Inc { "rising" } else { "falling" },
                rule.antecedent.0,
                if upstream == Dir::Inc { "rise" } else { "fall" },
                c.render()
            ));
            moving = upstream;
        }
        for c in &active_control {
            text.push_str(&format!("  Active control on this path: {}\n", c.render()));
        }
        steps.push(ExplanationStep {
            target: step.target.clone(),
            direction: step.direction,
            citations,
            active_control,
        });
    }
    Explanation { steps, text }
}
