use serde::{Deserialize, Serialize};

use crate::error::{DraeError, Result};
use crate::numerics::Rng;

pub const UCB_C: f64 = std::f64::consts::SQRT_2;
pub const ROLLOUT_DEPTH: usize = 20;
/// Predicate sets are stored as 64-bit masks.
pub const MAX_PREDICATES: usize = 64;

/// `pre ⇒ primitive`, applying `add`/`del` effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub pre: Vec<usize>,
    pub add: Vec<usize>,
    pub del: Vec<usize>,
    pub primitive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    pub predicates: Vec<String>,
    pub primitives: Vec<String>,
    pub rules: Vec<Rule>,
    /// Primitive × skill-column incidence.
    pub skill_matrix: Vec<Vec<u8>>,
    pub goal: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Compiled {
    pre: u64,
    add: u64,
    del: u64,
}

fn mask(ids: &[usize]) -> u64 {
    ids.iter().fold(0, |m, &i| m | (1u64 << i))
}

impl RuleSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let rs: Self = serde_json::from_str(text).map_err(|e| DraeError::RuleSet(e.to_string()))?;
        rs.validate()?;
        Ok(rs)
    }

    pub fn validate(&self) -> Result<()> {
        let np = self.predicates.len();
        if np == 0 || np > MAX_PREDICATES {
            return Err(DraeError::RuleSet(format!("predicate count {np} outside 1..={MAX_PREDICATES}")));
        }
        let check_ids = |ids: &[usize], what: &str| -> Result<()> {
            match ids.iter().find(|&&i| i >= np) {
                Some(i) => Err(DraeError::RuleSet(format!("{what} references unknown predicate {i}"))),
                None => Ok(()),
            }
        };
        for (k, r) in self.rules.iter().enumerate() {
            check_ids(&r.pre, &format!("rule {k} precondition"))?;
            check_ids(&r.add, &format!("rule {k} add effect"))?;
            check_ids(&r.del, &format!("rule {k} delete effect"))?;
            if r.primitive >= self.primitives.len() {
                return Err(DraeError::RuleSet(format!("rule {k} uses unknown primitive {}", r.primitive)));
            }
        }
        check_ids(&self.goal, "goal")?;
        if self.skill_matrix.len() != self.primitives.len() {
            return Err(DraeError::RuleSet(format!(
                "skill matrix has {} rows for {} primitives",
                self.skill_matrix.len(),
                self.primitives.len()
            )));
        }
        let cols = self.skill_matrix.first().map_or(0, Vec::len);
        for (p, row) in self.skill_matrix.iter().enumerate() {
            if row.len() != cols || row.iter().any(|v| *v > 1) {
                return Err(DraeError::RuleSet(format!("skill matrix row {p} is malformed")));
            }
        }
        for r in &self.rules {
            if !self.skill_matrix[r.primitive].contains(&1) {
                return Err(DraeError::RuleSet(format!(
                    "primitive {:?} maps to no skill column",
                    self.primitives[r.primitive]
                )));
            }
        }
        Ok(())
    }

    /// Skill columns bound to `primitive`.
    pub fn skills_of(&self, primitive: usize) -> Vec<usize> {
        self.skill_matrix[primitive].iter().enumerate().filter(|(_, v)| **v == 1).map(|(j, _)| j).collect()
    }

    pub fn predicate_id(&self, name: &str) -> Option<usize> {
        self.predicates.iter().position(|p| p == name)
    }

    pub fn state_of(&self, ids: &[usize]) -> u64 {
        mask(ids)
    }

    pub fn names_of(&self, state: u64) -> Vec<String> {
        (0..self.predicates.len()).filter(|i| state >> i & 1 == 1).map(|i| self.predicates[i].clone()).collect()
    }

    /// Primitive names for a plan given as rule indices.
    pub fn primitive_names(&self, plan: &[usize]) -> Vec<String> {
        plan.iter().map(|&r| self.primitives[self.rules[r].primitive].clone()).collect()
    }

    fn compiled(&self) -> Vec<Compiled> {
        self.rules.iter().map(|r| Compiled { pre: mask(&r.pre), add: mask(&r.add), del: mask(&r.del) }).collect()
    }

    /// Small reach/grasp/move/pour domain with distractor rules; its unique
    /// shortest plan has four steps.
    pub fn fetch_cup() -> Self {
        let predicates = ["hand_empty", "at_home", "near_cup", "holding", "at_target", "poured", "table_clean"];
        let primitives = ["reach", "grasp", "move", "pour", "release", "retreat", "wipe"];
        let rule = |pre: &[usize], add: &[usize], del: &[usize], primitive| Rule {
            pre: pre.to_vec(),
            add: add.to_vec(),
            del: del.to_vec(),
            primitive,
        };
        Self {
            predicates: predicates.iter().map(|s| s.to_string()).collect(),
            primitives: primitives.iter().map(|s| s.to_string()).collect(),
            rules: vec![
                rule(&[0, 1], &[2], &[1], 0),
                rule(&[2, 0], &[3], &[0], 1),
                rule(&[3, 2], &[4], &[2], 2),
                rule(&[3, 4], &[5], &[], 3),
                rule(&[3], &[0], &[3], 4),
                rule(&[2], &[1], &[2], 5),
                rule(&[1, 0], &[6], &[], 6),
            ],
            skill_matrix: vec![
                vec![1, 0, 0],
                vec![0, 1, 0],
                vec![1, 0, 0],
                vec![0, 0, 1],
                vec![0, 1, 0],
                vec![1, 0, 0],
                vec![0, 0, 1],
            ],
            goal: vec![5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PlanOutcome {
    /// Rule indices in execution order.
    Found(Vec<usize>),
    Failed { simulations: usize },
}

/// Replays `plan` from `initial`; returns every visited state, or `None` at
/// the first unmet precondition or unknown rule.
pub fn simulate(rules: &RuleSet, initial: u64, plan: &[usize]) -> Option<Vec<u64>> {
    let compiled = rules.compiled();
    let mut s = initial;
    let mut trace = vec![s];
    for &r in plan {
        let c = compiled.get(r)?;
        if s & c.pre != c.pre {
            return None;
        }
        s = (s & !c.del) | c.add;
        trace.push(s);
    }
    Some(trace)
}

/// True iff every precondition holds in sequence and the goal holds at the end.
pub fn validate_plan(rules: &RuleSet, initial: &[usize], plan: &[usize]) -> bool {
    let goal = mask(&rules.goal);
    match simulate(rules, mask(initial), plan) {
        Some(trace) => trace.last().is_some_and(|s| s & goal == goal),
        None => false,
    }
}

struct Node {
    state: u64,
    visits: f64,
    value: f64,
    children: Vec<(usize, usize)>,
    untried: Vec<usize>,
}

impl Node {
    fn new(state: u64, compiled: &[Compiled]) -> Self {
        let untried = (0..compiled.len()).filter(|&r| state & compiled[r].pre == compiled[r].pre).collect();
        Self { state, visits: 0.0, value: 0.0, children: Vec::new(), untried }
    }
}

/// UCB1 tree search over predicate states.
///
/// Runs `budget` simulations and returns the shortest goal-reaching
/// trajectory seen, checked with [`validate_plan`].
pub fn plan(rules: &RuleSet, initial: &[usize], budget: usize, rng: &mut Rng) -> Result<PlanOutcome> {
    if budget == 0 {
        return Err(DraeError::InvalidParameter("planning budget must be at least 1".into()));
    }
    rules.validate()?;
    if let Some(i) = initial.iter().find(|&&i| i >= rules.predicates.len()) {
        return Err(DraeError::RuleSet(format!("initial state references unknown predicate {i}")));
    }
    let goal = mask(&rules.goal);
    let init = mask(initial);
    if init & goal == goal {
        return Ok(PlanOutcome::Found(Vec::new()));
    }
    let compiled = rules.compiled();
    let mut nodes = vec![Node::new(init, &compiled)];
    let mut best: Option<Vec<usize>> = None;

    for _ in 0..budget {
        let mut path_nodes = vec![0usize];
        let mut actions: Vec<usize> = Vec::new();
        let mut cur = 0usize;
        let reward;
        loop {
            let state = nodes[cur].state;
            if state & goal == goal {
                reward = 1.0;
                break;
            }
            if !nodes[cur].untried.is_empty() {
                let pick = rng.below(nodes[cur].untried.len());
                let r = nodes[cur].untried.swap_remove(pick);
                let c = compiled[r];
                let child_state = (state & !c.del) | c.add;
                nodes.push(Node::new(child_state, &compiled));
                let child = nodes.len() - 1;
                nodes[cur].children.push((r, child));
                path_nodes.push(child);
                actions.push(r);
                reward = rollout(child_state, goal, &compiled, rng, &mut actions);
                break;
            }
            if nodes[cur].children.is_empty() {
                reward = 0.0;
                break;
            }
            let ln_n = nodes[cur].visits.max(1.0).ln();
            let mut pick = nodes[cur].children[0];
            let mut best_score = f64::NEG_INFINITY;
            for &(r, ch) in &nodes[cur].children {
                let n = &nodes[ch];
                let score = if n.visits == 0.0 {
                    f64::INFINITY
                } else {
                    n.value / n.visits + UCB_C * (ln_n / n.visits).sqrt()
                };
                if score > best_score {
                    best_score = score;
                    pick = (r, ch);
                }
            }
            actions.push(pick.0);
            path_nodes.push(pick.1);
            cur = pick.1;
        }
        for &n in &path_nodes {
            nodes[n].visits += 1.0;
            nodes[n].value += reward;
        }
        if reward > 0.0 && best.as_ref().is_none_or(|b| actions.len() < b.len()) {
            best = Some(actions);
        }
    }
    match best {
        Some(p) if validate_plan(rules, initial, &p) => Ok(PlanOutcome::Found(p)),
        _ => Ok(PlanOutcome::Failed { simulations: budget }),
    }
}

/// Uniform random rollout; appends the actions taken up to reaching the goal.
fn rollout(mut s: u64, goal: u64, compiled: &[Compiled], rng: &mut Rng, actions: &mut Vec<usize>) -> f64 {
    let start = actions.len();
    for _ in 0..ROLLOUT_DEPTH {
        if s & goal == goal {
            return 1.0;
        }
        let applicable: Vec<usize> = (0..compiled.len()).filter(|&r| s & compiled[r].pre == compiled[r].pre).collect();
        if applicable.is_empty() {
            break;
        }
        let r = applicable[rng.below(applicable.len())];
        s = (s & !compiled[r].del) | compiled[r].add;
        actions.push(r);
    }
    if s & goal == goal {
        1.0
    } else {
        actions.truncate(start);
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_already_met() {
        let rs = RuleSet::fetch_cup();
        let out = plan(&rs, &[5], 10, &mut Rng::new(0)).unwrap();
        assert_eq!(out, PlanOutcome::Found(vec![]));
        assert!(validate_plan(&rs, &[5], &[]));
    }

    #[test]
    fn single_step_domain() {
        let rs = RuleSet {
            predicates: vec!["start".into(), "done".into()],
            primitives: vec!["finish".into()],
            rules: vec![Rule { pre: vec![0], add: vec![1], del: vec![], primitive: 0 }],
            skill_matrix: vec![vec![1]],
            goal: vec![1],
        };
        assert_eq!(plan(&rs, &[0], 5, &mut Rng::new(1)).unwrap(), PlanOutcome::Found(vec![0]));
    }

    #[test]
    fn unreachable_goal_fails() {
        let mut rs = RuleSet::fetch_cup();
        rs.rules.retain(|r| r.primitive != 3);
        let out = plan(&rs, &[0, 1], 200, &mut Rng::new(2)).unwrap();
        assert_eq!(out, PlanOutcome::Failed { simulations: 200 });
    }

    #[test]
    fn fetch_cup_plan_and_validation() {
        let rs = RuleSet::fetch_cup();
        let out = plan(&rs, &[0, 1], 10_000, &mut Rng::new(3)).unwrap();
        let PlanOutcome::Found(p) = out else { panic!("no plan") };
        assert_eq!(rs.primitive_names(&p), vec!["reach", "grasp", "move", "pour"]);
        // precondition of grasp violated at step 2
        assert!(!validate_plan(&rs, &[0, 1], &[0, 2, 3]));
    }

    #[test]
    fn rejects_malformed_rule_sets() {
        let mut rs = RuleSet::fetch_cup();
        rs.skill_matrix[3] = vec![0, 0, 0];
        assert!(rs.validate().is_err());
        let mut rs = RuleSet::fetch_cup();
        rs.rules[0].add = vec![99];
        assert!(rs.validate().is_err());
        assert!(RuleSet::from_json("{\"predicates\": []}").is_err());
        assert!(plan(&RuleSet::fetch_cup(), &[0], 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let rs = RuleSet::fetch_cup();
        let text = serde_json::to_string(&rs).unwrap();
        assert!(text.contains("\"del\""));
        assert_eq!(RuleSet::from_json(&text).unwrap(), rs);
    }
}
