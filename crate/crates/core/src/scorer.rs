//! Feature potential for symbolic-regression expression strings.
//!
//! A hand-tuned scalar over syntactic features (function counts, parameter
//! usage, parenthesis balance, affinity with known model shapes) mapped into
//! a bounded range. The arithmetic follows the reference implementation
//! operation by operation so that scores agree bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::KernelEstimate;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("invalid scorer parameters: {0}")]
    BadParams(String),
    #[error("cannot parse scorer parameters: {0}")]
    Json(#[from] serde_json::Error),
}

impl ScorerError {
    pub fn code(&self) -> &'static str {
        match self {
            ScorerError::BadParams(_) => "BAD_PARAMS",
            ScorerError::Json(_) => "BAD_PARAMS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerParams {
    pub empty_input_potential: f64,
    pub paren_penalty: f64,
    pub extra_char_penalty: f64,
    pub extra_char_threshold: f64,
    pub length_penalty_divisor: f64,
    pub max_depth_penalty: f64,
    pub max_depth_threshold: f64,
    pub func_penalty: f64,
    pub div_pow_penalty: f64,
    pub abs_penalty: f64,
    pub trig_penalty: f64,
    pub nested_expr_penalty: f64,
    pub div_zero_risk_penalty: f64,
    pub pow_risk_penalty: f64,
    pub sqrt_risk_penalty: f64,
    pub no_params_penalty: f64,
    pub few_params_penalty: f64,
    pub few_params_threshold: f64,
    pub optimal_params_min: f64,
    pub optimal_params_max: f64,
    pub optimal_params_bonus: f64,
    /// Part of the published table but never read by the scoring rule.
    pub excess_params_penalty: f64,
    pub excess_params_threshold: f64,
    pub freq_var_weight: f64,
    pub freq_var_cap: f64,
    pub entropy_bonus: f64,
    pub log_v_bonus: f64,
    pub log_bonus: f64,
    pub pattern_affinity_bonus: f64,
    pub pattern_count_divisor: f64,
    pub linear_logv_weight: f64,
    pub centered_linear_weight: f64,
    pub nonlinear_weight: f64,
    pub exp_weight: f64,
    pub proximity_cap: f64,
    pub proximity_bonus: f64,
    pub simple_bonus: f64,
    pub simple_length_threshold: f64,
    pub simple_func_threshold: f64,
    pub short_bonus: f64,
    pub short_length_threshold: f64,
    pub max_energy: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub pattern_affinity_threshold: f64,
    pub pattern_affinity_adjustment: f64,
    pub min_potential: f64,
    pub max_potential: f64,
    pub nan_inf_default: f64,
    pub overall_factor: f64,
    pub id_to_token: BTreeMap<u32, String>,
}

impl Default for ScorerParams {
    fn default() -> Self {
        ScorerParams {
            empty_input_potential: -0.85,
            paren_penalty: 1.70,
            extra_char_penalty: 0.43,
            extra_char_threshold: 2.13,
            length_penalty_divisor: 4.00,
            max_depth_penalty: 0.42,
            max_depth_threshold: 0.33,
            func_penalty: 0.36,
            div_pow_penalty: 0.42,
            abs_penalty: 6.50,
            trig_penalty: 0.75,
            nested_expr_penalty: 0.54,
            div_zero_risk_penalty: 0.54,
            pow_risk_penalty: 1.05,
            sqrt_risk_penalty: 0.20,
            no_params_penalty: 1.00,
            few_params_penalty: 1.50,
            few_params_threshold: 2.87,
            optimal_params_min: 3.00,
            optimal_params_max: 5.53,
            optimal_params_bonus: 0.43,
            excess_params_penalty: 1.07,
            excess_params_threshold: -0.48,
            freq_var_weight: 1.82,
            freq_var_cap: 10.04,
            entropy_bonus: 0.60,
            log_v_bonus: 1.35,
            log_bonus: 0.60,
            pattern_affinity_bonus: 0.15,
            pattern_count_divisor: 11.67,
            linear_logv_weight: 0.29,
            centered_linear_weight: 0.27,
            nonlinear_weight: 0.81,
            exp_weight: 0.35,
            proximity_cap: 3.74,
            proximity_bonus: 0.14,
            simple_bonus: 1.00,
            simple_length_threshold: 77.42,
            simple_func_threshold: 2.00,
            short_bonus: 0.50,
            short_length_threshold: 50.72,
            max_energy: 4.59,
            k: 1.37,
            pattern_affinity_threshold: 0.29,
            pattern_affinity_adjustment: 0.01,
            min_potential: -1.72,
            max_potential: 0.93,
            nan_inf_default: 0.00,
            overall_factor: 2.04,
            id_to_token: default_tokens(),
        }
    }
}

fn default_tokens() -> BTreeMap<u32, String> {
    const TOKENS: [&str; 34] = [
        "sin", "cos", "tan", "arcsin", "arccos", "arctan", "tanh", "log", "log10", "exp", "square", "sqrt", "abs",
        "*", "**", "/", "+", "-", "1", "2", "pi", "log_v_k_nu", "param1", "param2", "param3", "param4", "param5",
        "param6", "param7", "param8", "param9", "(", ")", " ",
    ];
    TOKENS.iter().enumerate().map(|(i, t)| (i as u32, t.to_string())).collect()
}

impl ScorerParams {
    pub fn validate(self) -> Result<Self, ScorerError> {
        if !(self.min_potential < self.max_potential) {
            return Err(ScorerError::BadParams("min_potential must be below max_potential".into()));
        }
        if !(self.k > 0.0) {
            return Err(ScorerError::BadParams("K must be positive".into()));
        }
        if !(self.pattern_count_divisor > 0.0) {
            return Err(ScorerError::BadParams("pattern_count_divisor must be positive".into()));
        }
        Ok(self)
    }

    /// Parses a JSON object of overrides; absent keys keep their defaults.
    pub fn from_json(text: &str) -> Result<Self, ScorerError> {
        serde_json::from_str::<ScorerParams>(text)?.validate()
    }

    /// Smallest and largest score of a nonempty input.
    pub fn score_range(&self) -> (f64, f64) {
        (self.min_potential * self.overall_factor, self.max_potential * self.overall_factor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureVector {
    pub num_funcs: usize,
    pub num_exp: usize,
    pub num_log: usize,
    pub num_sqrt: usize,
    pub num_abs: usize,
    pub num_trig: usize,
    pub num_div: usize,
    pub num_pow: usize,
    pub num_params: usize,
    pub param_counts: Vec<(String, usize)>,
    pub freq_var: f64,
    pub entropy_norm: f64,
    pub has_log_v: bool,
    pub linear_logv: bool,
    pub centered_linear: bool,
    pub logistic_present: bool,
    pub tanh_present: bool,
    pub softplus_present: bool,
    pub nested_expr: bool,
    pub div_zero_risk: bool,
    pub pow_risk: bool,
    pub sqrt_risk: bool,
    pub max_depth: usize,
    pub bad_paren: bool,
    pub extra_chars: usize,
    /// Length in characters of the stripped input.
    pub length: usize,
    /// True when the stripped input is empty.
    pub empty: bool,
    // Inputs to the simplicity rule, kept so scoring needs no second pass.
    simple_charset: bool,
    has_zero: bool,
}

impl FeatureVector {
    pub fn pattern_count(&self) -> usize {
        [
            self.has_log_v,
            self.linear_logv,
            self.centered_linear,
            self.logistic_present,
            self.tanh_present,
            self.softplus_present,
        ]
        .iter()
        .filter(|b| **b)
        .count()
    }
}

// Whitespace as understood by the reference (Unicode White_Space plus the
// four ASCII separators U+001C..U+001F).
const WS: &str = r"[\s\x1C-\x1F]";

struct Patterns {
    funcs: Regex,
    param: Regex,
    linear_logv: Regex,
    centered_linear: Regex,
    logistic: Regex,
    tanh: Regex,
    softplus: Regex,
    exp_call: Regex,
    log_call: Regex,
    sqrt_abs: Regex,
    extra: Regex,
    simple: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let re = |p: &str| Regex::new(&p.replace(r"\s", WS)).expect("static pattern");
        Patterns {
            funcs: re(r"\b(?:exp|log|ln|log10|sqrt|tanh|sin|cos|tan|abs|pow|ceil|floor|log_v_k_nu)\b"),
            param: re(r"\bparam\d+\b"),
            linear_logv: re(r"\bparam\d+\s*\*\s*log_v_k_nu\b"),
            centered_linear: re(r"\bparam\d+\s*\*\s*\(\s*log_v_k_nu\s*[-]\s*param\d+\s*\)"),
            logistic: re(r"1\s*/\s*\(\s*1\s*\+\s*exp"),
            tanh: re(r"\btanh\s*\("),
            softplus: re(r"log\s*\(\s*1\s*\+\s*exp"),
            exp_call: re(r"exp\s*\("),
            log_call: re(r"log\s*\("),
            sqrt_abs: re(r"sqrt\s*\(\s*abs"),
            // character classes get the separators spliced in directly
            extra: Regex::new(r"[^0-9a-zA-Z_\+\-\*/\^\.\(\),\s\x1C-\x1F]").unwrap(),
            simple: Regex::new(r"^[0-9a-zA-Z_\s\x1C-\x1F\+\-\*/\.\(\),]+$").unwrap(),
        }
    })
}

fn is_py_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

fn strip(s: &str) -> &str {
    s.trim_matches(is_py_space)
}

pub fn extract_features(input: &str) -> FeatureVector {
    let s = strip(input);
    let lower = s.to_lowercase();
    let l = lower.as_str();
    let p = patterns();

    let mut depth: i64 = 0;
    let mut max_depth: i64 = 0;
    let mut bad_paren = false;
    for ch in s.chars() {
        if ch == '(' {
            depth += 1;
            max_depth = max_depth.max(depth);
        } else if ch == ')' {
            depth -= 1;
            if depth < 0 {
                bad_paren = true;
                depth = 0;
            }
        }
    }
    if depth != 0 {
        bad_paren = true;
    }

    let count = |needle: &str| l.matches(needle).count();
    let params: Vec<&str> = p.param.find_iter(l).map(|m| m.as_str()).collect();
    let mut per_param: BTreeMap<&str, usize> = BTreeMap::new();
    for name in &params {
        *per_param.entry(name).or_default() += 1;
    }
    let num_params = per_param.len();
    let (freq_var, entropy_norm) = if num_params > 0 {
        let total = params.len() as f64;
        let mean = total / num_params as f64;
        let var = per_param.values().map(|&c| (c as f64 - mean) * (c as f64 - mean)).fold(0.0, |a, b| a + b)
            / num_params as f64;
        let entropy = -per_param
            .values()
            .map(|&c| (c as f64 / total) * ((c as f64 / total) + 1e-12).ln())
            .fold(0.0, |a, b| a + b);
        let norm = if num_params > 1 { entropy / ((num_params as f64).ln() + 1e-12) } else { 0.0 };
        (var, norm)
    } else {
        (0.0, 0.0)
    };

    let num_pow = count("**") + count("^");
    let num_sqrt = count("sqrt");
    FeatureVector {
        num_funcs: p.funcs.find_iter(l).count(),
        num_exp: count("exp"),
        num_log: count("log") + count("ln") + count("log10"),
        num_sqrt,
        num_abs: count("abs"),
        num_trig: count("sin") + count("cos") + count("tan"),
        num_div: count("/"),
        num_pow,
        num_params,
        param_counts: per_param.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        freq_var,
        entropy_norm,
        has_log_v: l.contains("log_v_k_nu"),
        linear_logv: p.linear_logv.is_match(l),
        centered_linear: p.centered_linear.is_match(l),
        logistic_present: p.logistic.is_match(l),
        tanh_present: p.tanh.is_match(l),
        softplus_present: p.softplus.is_match(l),
        nested_expr: p.exp_call.is_match(l) || p.log_call.is_match(l),
        div_zero_risk: l.contains('/'),
        pow_risk: num_pow > 0,
        sqrt_risk: num_sqrt > 0 && !p.sqrt_abs.is_match(l),
        max_depth: max_depth as usize,
        bad_paren,
        extra_chars: p.extra.find_iter(l).count(),
        length: s.chars().count(),
        empty: l.is_empty(),
        simple_charset: p.simple.is_match(l),
        has_zero: l.contains('0'),
    }
}

// Python's round(x, 5): round the exact binary value to 5 decimals.
fn round5(x: f64) -> f64 {
    format!("{x:.5}").parse().expect("formatted float parses")
}

pub fn score(s: &str, p: &ScorerParams) -> f64 {
    score_features(&extract_features(s), p)
}

/// Scores the expression spelled by `ids` through `id_to_token`; unknown ids
/// contribute nothing.
pub fn score_tokens(ids: &[u32], p: &ScorerParams) -> f64 {
    let s: String = ids.iter().filter_map(|i| p.id_to_token.get(i)).map(String::as_str).collect();
    score(&s, p)
}

pub fn score_features(f: &FeatureVector, p: &ScorerParams) -> f64 {
    if f.empty {
        return p.empty_input_potential;
    }
    round5(mapped_value(f, p)) * p.overall_factor
}

// Clamped value in [min_potential, max_potential] before rounding and scaling.
fn mapped_value(f: &FeatureVector, p: &ScorerParams) -> f64 {
    let num_params = f.num_params as f64;
    let length = f.length as f64;
    let pattern_affinity = f.pattern_count() as f64 / p.pattern_count_divisor;

    let mut energy = 0.0;
    if f.bad_paren {
        energy += p.paren_penalty;
    }
    energy += (f.extra_chars as f64 - p.extra_char_threshold).max(0.0) * p.extra_char_penalty;
    energy += length.ln_1p() / p.length_penalty_divisor;
    energy += (f.max_depth as f64 - p.max_depth_threshold).max(0.0) * p.max_depth_penalty;

    energy += f.num_funcs as f64 * p.func_penalty;
    energy += (f.num_div + f.num_pow) as f64 * p.div_pow_penalty;
    energy += f.num_abs as f64 * p.abs_penalty;
    energy += f.num_trig as f64 * p.trig_penalty;

    energy += if f.nested_expr { p.nested_expr_penalty } else { 0.0 };
    energy += if f.div_zero_risk { p.div_zero_risk_penalty } else { 0.0 };
    energy += if f.pow_risk { p.pow_risk_penalty } else { 0.0 };
    energy += if f.sqrt_risk { p.sqrt_risk_penalty } else { 0.0 };

    if f.num_params == 0 {
        energy += p.no_params_penalty;
    } else if num_params < p.few_params_threshold {
        energy += p.few_params_penalty * (p.few_params_threshold - num_params);
    } else if p.optimal_params_min <= num_params && num_params <= p.optimal_params_max {
        energy -= p.optimal_params_bonus;
    } else {
        energy += num_params - p.excess_params_threshold;
    }

    energy += p.freq_var_weight * f.freq_var.min(p.freq_var_cap);
    energy -= p.entropy_bonus * f.entropy_norm;

    if f.has_log_v {
        energy -= p.log_v_bonus;
    } else if f.num_log > 0 {
        energy -= p.log_bonus;
    }

    energy -= p.pattern_affinity_bonus * pattern_affinity;

    let mut proximity = 0.0;
    if f.has_log_v && f.num_params > 0 {
        let nonlinear = (f.logistic_present as u32 + f.tanh_present as u32 + f.softplus_present as u32) as f64;
        proximity = p.linear_logv_weight * f.linear_logv as u32 as f64
            + p.centered_linear_weight * f.centered_linear as u32 as f64
            + p.nonlinear_weight * nonlinear
            + p.exp_weight * f.num_exp as f64;
        proximity = p.proximity_cap.min(proximity);
    }
    energy -= p.proximity_bonus * proximity;

    let truly_simple = f.simple_charset && f.num_funcs as f64 <= p.simple_func_threshold && f.num_pow == 0;
    if truly_simple && length < p.simple_length_threshold {
        energy -= p.simple_bonus;
    } else if length < p.short_length_threshold {
        energy -= p.short_bonus;
    }

    // Unstable-operation check: deliberately contributes nothing.
    if f.has_zero && (f.div_zero_risk || f.num_pow > 0) {
        energy += 0.0;
    }

    if energy < 0.0 {
        energy = 0.0;
    }
    if energy > p.max_energy {
        energy = p.max_energy;
    }

    let norm = 1.0 - (-energy / p.k).exp();
    let mut val = -1.0 + 2.0 * norm;
    if pattern_affinity >= p.pattern_affinity_threshold
        && (f.logistic_present || f.tanh_present || f.softplus_present || f.has_log_v)
    {
        val -= p.pattern_affinity_adjustment;
    }
    if !val.is_finite() {
        val = p.nan_inf_default;
    }
    p.min_potential.max(p.max_potential.min(val))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directionality {
    pub n_down: usize,
    pub n_up: usize,
    pub n_flat: usize,
    pub frac_down: f64,
    pub frac_up: f64,
    pub frac_flat: f64,
}

/// Classifies every transition with T(g←f) > `threshold` by the sign of
/// score(f) − score(g): positive is down, negative is up, zero is flat.
pub fn directionality_report(kernel: &KernelEstimate, params: &ScorerParams, threshold: f64) -> Directionality {
    let mut cache: HashMap<&str, f64> = HashMap::new();
    let (mut down, mut up, mut flat) = (0, 0, 0);
    for (f, g, prob, _) in kernel.entries() {
        if prob <= threshold {
            continue;
        }
        let sf = *cache.entry(f.as_str()).or_insert_with(|| score(f.as_str(), params));
        let sg = *cache.entry(g.as_str()).or_insert_with(|| score(g.as_str(), params));
        match (sf - sg).partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => down += 1,
            Some(std::cmp::Ordering::Less) => up += 1,
            _ => flat += 1,
        }
    }
    let n = (down + up + flat).max(1) as f64;
    Directionality {
        n_down: down,
        n_up: up,
        n_flat: flat,
        frac_down: down as f64 / n,
        frac_up: up as f64 / n,
        frac_flat: flat as f64 / n,
    }
}
