//! Symbolic regression by genetic programming.
//!
//! Expressions are stored as prefix-ordered node lists, so every subtree is a
//! contiguous slice. Evaluation is total: division by a near-zero denominator
//! yields 1 and infinite intermediates are clamped to `±f64::MAX`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Denominators smaller than this in magnitude make division return 1.
pub const PROTECTED_DIV_EPS: f64 = 1e-12;
/// Constant terminals are drawn uniformly from `[−CONST_RANGE, CONST_RANGE]`.
pub const CONST_RANGE: f64 = 5.0;
/// Attempts at a depth-respecting crossover before the parents are returned.
pub const MAX_CROSSOVER_RETRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Exp,
    Var(usize),
    Const(f64),
}

impl Node {
    pub fn arity(self) -> usize {
        match self {
            Node::Add | Node::Sub | Node::Mul | Node::Div => 2,
            Node::Sin | Node::Cos | Node::Exp => 1,
            Node::Var(_) | Node::Const(_) => 0,
        }
    }

    fn symbol(self) -> String {
        match self {
            Node::Add => "+".into(),
            Node::Sub => "-".into(),
            Node::Mul => "*".into(),
            Node::Div => "/".into(),
            Node::Sin => "sin".into(),
            Node::Cos => "cos".into(),
            Node::Exp => "exp".into(),
            Node::Var(i) => format!("x{i}"),
            Node::Const(c) => format!("{c:?}"),
        }
    }
}

/// Node kinds a search may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Exp,
    Var,
    Const,
}

impl Primitive {
    pub const ALL: [Primitive; 9] = [
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Div,
        Primitive::Sin,
        Primitive::Cos,
        Primitive::Exp,
        Primitive::Var,
        Primitive::Const,
    ];

    fn is_terminal(self) -> bool {
        matches!(self, Primitive::Var | Primitive::Const)
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "+" | "add" => Primitive::Add,
            "-" | "sub" => Primitive::Sub,
            "*" | "mul" => Primitive::Mul,
            "/" | "div" => Primitive::Div,
            "sin" => Primitive::Sin,
            "cos" => Primitive::Cos,
            "exp" => Primitive::Exp,
            "x" | "var" => Primitive::Var,
            "const" | "c" => Primitive::Const,
            other => return Err(Error::param(format!("unknown primitive '{other}'"))),
        })
    }
}

fn clamp_inf(v: f64) -> f64 {
    if v == f64::INFINITY {
        f64::MAX
    } else if v == f64::NEG_INFINITY {
        f64::MIN
    } else {
        v
    }
}

fn apply_binary(op: Node, a: f64, b: f64) -> f64 {
    clamp_inf(match op {
        Node::Add => a + b,
        Node::Sub => a - b,
        Node::Mul => a * b,
        Node::Div if b.abs() < PROTECTED_DIV_EPS => 1.0,
        Node::Div => a / b,
        _ => unreachable!("not a binary node"),
    })
}

fn apply_unary(op: Node, a: f64) -> f64 {
    clamp_inf(match op {
        Node::Sin => a.sin(),
        Node::Cos => a.cos(),
        Node::Exp => a.exp(),
        _ => unreachable!("not a unary node"),
    })
}

/// Expression tree in prefix order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprTree {
    nodes: Vec<Node>,
}

impl ExprTree {
    /// Checks that `nodes` is exactly one well-formed prefix expression with
    /// finite constants.
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        let mut need = 1usize;
        for (i, n) in nodes.iter().enumerate() {
            if need == 0 {
                return Err(Error::InvalidData(format!("trailing nodes after position {i}")));
            }
            if let Node::Const(c) = n {
                if !c.is_finite() {
                    return Err(Error::InvalidData("expression constants must be finite".into()));
                }
            }
            need = need - 1 + n.arity();
        }
        if need != 0 {
            return Err(Error::InvalidData("expression is missing operands".into()));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// Index one past the end of the subtree rooted at `i`.
    pub fn subtree_end(&self, i: usize) -> usize {
        let mut need = 1usize;
        let mut j = i;
        while need > 0 {
            need = need - 1 + self.nodes[j].arity();
            j += 1;
        }
        j
    }

    /// Level of every node, root at 0.
    pub fn node_depths(&self) -> Vec<usize> {
        let mut depths = Vec::with_capacity(self.nodes.len());
        let mut open: Vec<(usize, usize)> = Vec::new(); // (depth, remaining children)
        for n in &self.nodes {
            let d = open.last().map_or(0, |&(pd, _)| pd + 1);
            depths.push(d);
            if let Some(top) = open.last_mut() {
                top.1 -= 1;
            }
            while open.last().is_some_and(|&(_, rem)| rem == 0) {
                open.pop();
            }
            if n.arity() > 0 {
                open.push((d, n.arity()));
            }
        }
        depths
    }

    /// Length of the longest root-to-leaf path in edges; a lone terminal has
    /// depth 0.
    pub fn depth(&self) -> usize {
        self.node_depths().into_iter().max().unwrap_or(0)
    }

    /// One more than the largest variable index used.
    pub fn n_vars_required(&self) -> usize {
        self.nodes.iter().filter_map(|n| if let Node::Var(i) = n { Some(i + 1) } else { None }).max().unwrap_or(0)
    }

    pub fn eval_point(&self, x: &[f64]) -> f64 {
        fn go(nodes: &[Node], i: usize, x: &[f64]) -> (f64, usize) {
            match nodes[i] {
                Node::Var(k) => (x[k], i + 1),
                Node::Const(c) => (c, i + 1),
                op if op.arity() == 1 => {
                    let (a, next) = go(nodes, i + 1, x);
                    (apply_unary(op, a), next)
                }
                op => {
                    let (a, mid) = go(nodes, i + 1, x);
                    let (b, next) = go(nodes, mid, x);
                    (apply_binary(op, a, b), next)
                }
            }
        }
        go(&self.nodes, 0, x).0
    }

    /// Evaluates the expression on every row of `x`.
    pub fn eval(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if self.n_vars_required() > x.ncols() {
            return Err(Error::DimensionMismatch {
                context: "expression variables",
                expected: self.n_vars_required(),
                found: x.ncols(),
            });
        }
        let mut row = vec![0.0; x.ncols()];
        Ok((0..x.nrows())
            .map(|r| {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = x[(r, c)];
                }
                self.eval_point(&row)
            })
            .collect())
    }

    /// Parenthesized prefix form, e.g. `(+ (* x0 x0) x0)`.
    pub fn to_prefix(&self) -> String {
        fn go(nodes: &[Node], i: usize, out: &mut String) -> usize {
            let n = nodes[i];
            if n.arity() == 0 {
                out.push_str(&n.symbol());
                return i + 1;
            }
            out.push('(');
            out.push_str(&n.symbol());
            let mut j = i + 1;
            for _ in 0..n.arity() {
                out.push(' ');
                j = go(nodes, j, out);
            }
            out.push(')');
            j
        }
        let mut s = String::new();
        go(&self.nodes, 0, &mut s);
        s
    }

    /// Conventional infix form, e.g. `((x0 * x0) + x0)`.
    pub fn to_infix(&self) -> String {
        fn go(nodes: &[Node], i: usize) -> (String, usize) {
            let n = nodes[i];
            match n.arity() {
                0 => (n.symbol(), i + 1),
                1 => {
                    let (a, next) = go(nodes, i + 1);
                    (format!("{}({a})", n.symbol()), next)
                }
                _ => {
                    let (a, mid) = go(nodes, i + 1);
                    let (b, next) = go(nodes, mid);
                    (format!("({a} {} {b})", n.symbol()), next)
                }
            }
        }
        go(&self.nodes, 0).0
    }

    pub fn parse_prefix(s: &str) -> Result<Self> {
        let spaced = s.replace('(', " ( ").replace(')', " ) ");
        let tokens: Vec<&str> = spaced.split_whitespace().collect();
        let mut nodes = Vec::new();
        let mut pos = 0;
        parse_expr(&tokens, &mut pos, &mut nodes)?;
        if pos != tokens.len() {
            return Err(Error::InvalidData(format!("unexpected token '{}'", tokens[pos])));
        }
        Self::new(nodes)
    }
}

fn parse_expr(tokens: &[&str], pos: &mut usize, out: &mut Vec<Node>) -> Result<()> {
    let tok = *tokens.get(*pos).ok_or_else(|| Error::InvalidData("unexpected end of expression".into()))?;
    *pos += 1;
    if tok == "(" {
        let head = *tokens.get(*pos).ok_or_else(|| Error::InvalidData("missing operator".into()))?;
        *pos += 1;
        let op = match head {
            "+" => Node::Add,
            "-" => Node::Sub,
            "*" => Node::Mul,
            "/" => Node::Div,
            "sin" => Node::Sin,
            "cos" => Node::Cos,
            "exp" => Node::Exp,
            other => return Err(Error::InvalidData(format!("unknown operator '{other}'"))),
        };
        out.push(op);
        for _ in 0..op.arity() {
            parse_expr(tokens, pos, out)?;
        }
        if tokens.get(*pos) != Some(&")") {
            return Err(Error::InvalidData(format!("expected ')' after {} operands of '{head}'", op.arity())));
        }
        *pos += 1;
        return Ok(());
    }
    if let Some(idx) = tok.strip_prefix('x') {
        let i = idx.parse().map_err(|_| Error::InvalidData(format!("bad variable '{tok}'")))?;
        out.push(Node::Var(i));
        return Ok(());
    }
    let c: f64 = tok.parse().map_err(|_| Error::InvalidData(format!("bad token '{tok}'")))?;
    out.push(Node::Const(c));
    Ok(())
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_infix())
    }
}

/// Search settings. The four operator rates must sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub primitives: Vec<Primitive>,
    pub population_size: usize,
    pub generations: usize,
    pub elitism_rate: f64,
    pub replication_rate: f64,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub max_depth: usize,
    pub tournament_size: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            primitives: Primitive::ALL.to_vec(),
            population_size: 200,
            generations: 50,
            elitism_rate: 0.02,
            replication_rate: 0.08,
            crossover_rate: 0.7,
            mutation_rate: 0.2,
            max_depth: 6,
            tournament_size: 5,
            seed: 42,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.elitism_rate, self.replication_rate, self.crossover_rate, self.mutation_rate];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::param("operator rates must lie in [0, 1]"));
        }
        let sum: f64 = rates.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("operator rates must sum to 1, got {sum}")));
        }
        if self.population_size < 2 {
            return Err(Error::param("population size must be at least 2"));
        }
        if self.tournament_size == 0 {
            return Err(Error::param("tournament size must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::param("max depth must be at least 1"));
        }
        if !self.primitives.iter().any(|p| p.is_terminal()) {
            return Err(Error::param("primitive set needs a variable or constant terminal"));
        }
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        ((self.elitism_rate * self.population_size as f64).round() as usize).min(self.population_size)
    }
}

/// Random tree construction and variation operators over a primitive set.
#[derive(Debug, Clone)]
pub struct TreeFactory {
    functions: Vec<Node>,
    terminals: Vec<Primitive>,
    n_vars: usize,
    max_depth: usize,
}

impl TreeFactory {
    pub fn new(primitives: &[Primitive], n_vars: usize, max_depth: usize) -> Result<Self> {
        let mut functions = Vec::new();
        let mut terminals = Vec::new();
        for &p in primitives {
            let node = match p {
                Primitive::Add => Node::Add,
                Primitive::Sub => Node::Sub,
                Primitive::Mul => Node::Mul,
                Primitive::Div => Node::Div,
                Primitive::Sin => Node::Sin,
                Primitive::Cos => Node::Cos,
                Primitive::Exp => Node::Exp,
                Primitive::Var if n_vars == 0 => continue,
                Primitive::Var | Primitive::Const => {
                    if !terminals.contains(&p) {
                        terminals.push(p);
                    }
                    continue;
                }
            };
            if !functions.contains(&node) {
                functions.push(node);
            }
        }
        if terminals.is_empty() {
            return Err(Error::param("no usable terminal in the primitive set"));
        }
        Ok(Self { functions, terminals, n_vars, max_depth })
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    fn terminal<R: Rng>(&self, rng: &mut R) -> Node {
        match *self.terminals.choose(rng).expect("non-empty") {
            Primitive::Var => Node::Var(rng.random_range(0..self.n_vars)),
            _ => Node::Const(rng.random_range(-CONST_RANGE..=CONST_RANGE)),
        }
    }

    fn build<R: Rng>(&self, depth_left: usize, full: bool, rng: &mut R, out: &mut Vec<Node>) {
        let n_f = self.functions.len();
        let pick_function =
            depth_left > 0 && n_f > 0 && (full || rng.random_range(0..n_f + self.terminals.len()) < n_f);
        if pick_function {
            let f = *self.functions.choose(rng).expect("non-empty");
            out.push(f);
            for _ in 0..f.arity() {
                self.build(depth_left - 1, full, rng, out);
            }
        } else {
            out.push(self.terminal(rng));
        }
    }

    /// Grows a random tree of depth at most `depth`; with `full` every branch
    /// reaches `depth` when function nodes are available.
    pub fn random_tree<R: Rng>(&self, depth: usize, full: bool, rng: &mut R) -> ExprTree {
        let mut nodes = Vec::new();
        self.build(depth, full, rng, &mut nodes);
        ExprTree { nodes }
    }

    /// Ramped half-and-half: depths cycle through `1..=max_depth`, alternating
    /// full and grow construction.
    pub fn ramped_population<R: Rng>(&self, size: usize, rng: &mut R) -> Vec<ExprTree> {
        (0..size)
            .map(|i| {
                let depth = 1 + (i / 2) % self.max_depth;
                self.random_tree(depth, i % 2 == 0, rng)
            })
            .collect()
    }

    /// Replaces a uniformly chosen node by a freshly grown subtree that keeps
    /// the tree within the depth limit.
    pub fn mutate<R: Rng>(&self, t: &ExprTree, rng: &mut R) -> ExprTree {
        let depths = t.node_depths();
        let i = rng.random_range(0..t.size());
        let end = t.subtree_end(i);
        let mut sub = Vec::new();
        self.build(self.max_depth.saturating_sub(depths[i]), false, rng, &mut sub);
        let mut nodes = Vec::with_capacity(t.size() - (end - i) + sub.len());
        nodes.extend_from_slice(&t.nodes[..i]);
        nodes.extend(sub);
        nodes.extend_from_slice(&t.nodes[end..]);
        ExprTree { nodes }
    }

    /// Swaps uniformly chosen subtrees. Offspring deeper than the limit are
    /// rejected; after [`MAX_CROSSOVER_RETRIES`] failures the parents are
    /// returned unchanged.
    pub fn crossover<R: Rng>(&self, a: &ExprTree, b: &ExprTree, rng: &mut R) -> (ExprTree, ExprTree) {
        for _ in 0..MAX_CROSSOVER_RETRIES {
            let i = rng.random_range(0..a.size());
            let j = rng.random_range(0..b.size());
            let (c1, c2) = crossover_at(a, b, i, j);
            if c1.depth() <= self.max_depth && c2.depth() <= self.max_depth {
                return (c1, c2);
            }
        }
        (a.clone(), b.clone())
    }
}

/// Exchanges the subtree of `a` rooted at `i` with that of `b` rooted at `j`.
pub fn crossover_at(a: &ExprTree, b: &ExprTree, i: usize, j: usize) -> (ExprTree, ExprTree) {
    let (ae, be) = (a.subtree_end(i), b.subtree_end(j));
    let splice = |host: &ExprTree, s: usize, e: usize, donor: &[Node]| {
        let mut nodes = Vec::with_capacity(host.size() - (e - s) + donor.len());
        nodes.extend_from_slice(&host.nodes[..s]);
        nodes.extend_from_slice(donor);
        nodes.extend_from_slice(&host.nodes[e..]);
        ExprTree { nodes }
    };
    (splice(a, i, ae, &b.nodes[j..be]), splice(b, j, be, &a.nodes[i..ae]))
}

/// Mean squared error of the expression on `d`; non-finite values map to
/// `+∞` so that ordering is total.
pub fn fitness(t: &ExprTree, d: &Dataset) -> f64 {
    let Ok(pred) = t.eval(d.inputs()) else {
        return f64::INFINITY;
    };
    let n = d.n_samples().max(1) as f64;
    let mse = pred.iter().enumerate().map(|(i, p)| (p - d.targets()[(i, 0)]).powi(2)).sum::<f64>() / n;
    if mse.is_nan() {
        f64::INFINITY
    } else {
        mse
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best fitness seen up to and including this generation.
    pub best_fitness: f64,
    /// Mean over individuals with finite fitness (`+∞` if there are none).
    pub mean_fitness: f64,
}

#[derive(Debug, Clone)]
pub struct EvolveResult {
    pub best: ExprTree,
    pub best_fitness: f64,
    /// Generation 0 is the initial population.
    pub history: Vec<GenerationStats>,
    /// Final population, in order.
    pub population: Vec<ExprTree>,
}

/// Strict "is better" order: lower fitness, then smaller tree, then lower
/// index.
fn better(fa: f64, sa: usize, ia: usize, fb: f64, sb: usize, ib: usize) -> bool {
    (fa, sa, ia).partial_cmp(&(fb, sb, ib)) == Some(std::cmp::Ordering::Less)
}

fn ranked(pop: &[ExprTree], fit: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pop.len()).collect();
    idx.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(pop[a].size().cmp(&pop[b].size())).then(a.cmp(&b)));
    idx
}

fn tournament<R: Rng>(pop: &[ExprTree], fit: &[f64], k: usize, rng: &mut R) -> usize {
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..k {
        let c = rng.random_range(0..pop.len());
        if better(fit[c], pop[c].size(), c, fit[best], pop[best].size(), best) {
            best = c;
        }
    }
    best
}

fn evaluate(pop: &[ExprTree], d: &Dataset) -> Vec<f64> {
    pop.par_iter().map(|t| fitness(t, d)).collect()
}

fn stats(generation: usize, best: f64, fit: &[f64]) -> GenerationStats {
    let finite: Vec<f64> = fit.iter().copied().filter(|f| f.is_finite()).collect();
    let mean_fitness = if finite.is_empty() { f64::INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 };
    GenerationStats { generation, best_fitness: best, mean_fitness }
}

/// Evolves a population against single-output data. The result depends only
/// on `(d, cfg)`; fitness is computed in parallel but all random draws come
/// from one seeded stream.
pub fn evolve(d: &Dataset, cfg: &GpConfig) -> Result<EvolveResult> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::InvalidData("symbolic regression needs at least one sample".into()));
    }
    if d.n_outputs() != 1 {
        return Err(Error::DimensionMismatch {
            context: "symbolic regression outputs",
            expected: 1,
            found: d.n_outputs(),
        });
    }
    let factory = TreeFactory::new(&cfg.primitives, d.n_inputs(), cfg.max_depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pop = factory.ramped_population(cfg.population_size, &mut rng);
    let mut fit = evaluate(&pop, d);
    let order = ranked(&pop, &fit);
    let mut best = pop[order[0]].clone();
    let mut best_fitness = fit[order[0]];
    let mut history = vec![stats(0, best_fitness, &fit)];

    let n_elite = cfg.elite_count();
    let other = cfg.replication_rate + cfg.crossover_rate + cfg.mutation_rate;
    for generation in 1..=cfg.generations {
        let order = ranked(&pop, &fit);
        let mut next: Vec<ExprTree> = order[..n_elite].iter().map(|&i| pop[i].clone()).collect();
        while next.len() < cfg.population_size {
            let u = rng.random::<f64>() * other;
            if u < cfg.replication_rate {
                let p = tournament(&pop, &fit, cfg.tournament_size, &mut rng);
                next.push(pop[p].clone());
            } else if u < cfg.replication_rate + cfg.crossover_rate {
                let p1 = tournament(&pop, &fit, cfg.tournament_size, &mut rng);
                let p2 = tournament(&pop, &fit, cfg.tournament_size, &mut rng);
                let (c1, c2) = factory.crossover(&pop[p1], &pop[p2], &mut rng);
                next.push(c1);
                if next.len() < cfg.population_size {
                    next.push(c2);
                }
            } else {
                let p = tournament(&pop, &fit, cfg.tournament_size, &mut rng);
                next.push(factory.mutate(&pop[p], &mut rng));
            }
        }
        pop = next;
        fit = evaluate(&pop, d);
        let top = ranked(&pop, &fit)[0];
        if better(fit[top], pop[top].size(), 0, best_fitness, best.size(), 1) {
            best = pop[top].clone();
            best_fitness = fit[top];
        }
        history.push(stats(generation, best_fitness, &fit));
    }
    Ok(EvolveResult { best, best_fitness, history, population: pop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x2_plus_x() -> ExprTree {
        ExprTree::new(vec![Node::Add, Node::Mul, Node::Var(0), Node::Var(0), Node::Var(0)]).unwrap()
    }

    #[test]
    fn figure_expression_at_zero() {
        // 2x·sin(x) + sin(x) + 3
        let t = ExprTree::parse_prefix("(+ (+ (* (* 2 x0) (sin x0)) (sin x0)) 3)").unwrap();
        assert_eq!(t.eval_point(&[0.0]), 3.0);
        assert_eq!(t.depth(), 4);
    }

    #[test]
    fn protected_division() {
        let t = ExprTree::parse_prefix("(/ x0 0)").unwrap();
        assert_eq!(t.eval_point(&[7.0]), 1.0);
        let t = ExprTree::parse_prefix("(/ x0 1e-13)").unwrap();
        assert_eq!(t.eval_point(&[7.0]), 1.0);
    }

    #[test]
    fn overflow_is_clamped() {
        let t = ExprTree::parse_prefix("(exp (exp (exp x0)))").unwrap();
        assert_eq!(t.eval_point(&[10.0]), f64::MAX);
        let t = ExprTree::parse_prefix("(sin (* (exp 1000) (exp 1000)))").unwrap();
        assert!(t.eval_point(&[0.0]).is_finite());
    }

    #[test]
    fn depth_and_size() {
        assert_eq!(ExprTree::new(vec![Node::Var(0)]).unwrap().depth(), 0);
        let t = x2_plus_x();
        assert_eq!(t.depth(), 2);
        assert_eq!(t.node_depths(), vec![0, 1, 2, 2, 1]);
        assert_eq!(t.subtree_end(1), 4);
    }

    #[test]
    fn prefix_and_infix() {
        let t = x2_plus_x();
        assert_eq!(t.to_prefix(), "(+ (* x0 x0) x0)");
        assert_eq!(t.to_infix(), "((x0 * x0) + x0)");
        assert_eq!(ExprTree::parse_prefix(&t.to_prefix()).unwrap(), t);
        let c = ExprTree::new(vec![Node::Cos, Node::Const(-0.1)]).unwrap();
        assert_eq!(ExprTree::parse_prefix(&c.to_prefix()).unwrap(), c);
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(ExprTree::new(vec![Node::Add, Node::Var(0)]).is_err());
        assert!(ExprTree::new(vec![Node::Var(0), Node::Var(0)]).is_err());
        assert!(ExprTree::new(vec![Node::Const(f64::NAN)]).is_err());
        assert!(ExprTree::parse_prefix("(+ x0)").is_err());
        assert!(ExprTree::parse_prefix("(pow x0 x0)").is_err());
    }

    #[test]
    fn root_crossover_swaps_trees() {
        let a = x2_plus_x();
        let b = ExprTree::parse_prefix("(sin x0)").unwrap();
        let (c1, c2) = crossover_at(&a, &b, 0, 0);
        assert_eq!((c1, c2), (b, a));
    }

    #[test]
    fn mutating_a_terminal_regrows_within_limit() {
        let f = TreeFactory::new(&Primitive::ALL, 1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = ExprTree::new(vec![Node::Var(0)]).unwrap();
        for _ in 0..50 {
            assert!(f.mutate(&t, &mut rng).depth() <= 3);
        }
    }

    #[test]
    fn config_validation() {
        assert!(GpConfig::default().validate().is_ok());
        let bad = GpConfig { crossover_rate: 0.5, ..GpConfig::default() };
        assert!(bad.validate().is_err());
        let tiny = GpConfig { population_size: 1, ..GpConfig::default() };
        assert!(tiny.validate().is_err());
        let no_terms = GpConfig { primitives: vec![Primitive::Add], ..GpConfig::default() };
        assert!(no_terms.validate().is_err());
    }

    #[test]
    fn full_elitism_keeps_population() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let d = Dataset::from_xy(&x, &y).unwrap();
        let cfg = GpConfig {
            population_size: 20,
            generations: 5,
            elitism_rate: 1.0,
            replication_rate: 0.0,
            crossover_rate: 0.0,
            mutation_rate: 0.0,
            ..GpConfig::default()
        };
        let start = {
            let f = TreeFactory::new(&cfg.primitives, 1, cfg.max_depth).unwrap();
            f.ramped_population(cfg.population_size, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
        };
        let r = evolve(&d, &cfg).unwrap();
        let mut a: Vec<String> = start.iter().map(ExprTree::to_prefix).collect();
        let mut b: Vec<String> = r.population.iter().map(ExprTree::to_prefix).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn variation_respects_depth_and_arity(seed in 0u64..500, depth in 1usize..6) {
            let f = TreeFactory::new(&Primitive::ALL, 2, depth).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = f.random_tree(depth, seed % 2 == 0, &mut rng);
            let b = f.random_tree(depth, false, &mut rng);
            prop_assert!(a.depth() <= depth && b.depth() <= depth);
            let (c1, c2) = f.crossover(&a, &b, &mut rng);
            let m = f.mutate(&c1, &mut rng);
            for t in [&c1, &c2, &m] {
                prop_assert!(t.depth() <= depth);
                prop_assert!(ExprTree::new(t.nodes().to_vec()).is_ok());
            }
        }

        #[test]
        fn evaluation_is_total(seed in 0u64..300, x in -1e6f64..1e6) {
            let f = TreeFactory::new(&Primitive::ALL, 1, 6).unwrap();
            let t = f.random_tree(6, false, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(t.eval_point(&[x]).is_finite());
        }
    }
}
