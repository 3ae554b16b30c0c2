//! SEIRD compartments integrated with forward Euler at a fixed step.

use serde_json::json;

use super::{payload, Args, Built, ConfigError, FlagSpec};
use crate::kernel::{Atomic, AtomicModel, Context, CoupledModel, Inputs, KernelError, Outputs, SimTime, Status};

pub const FLAGS: &[FlagSpec] = &[
    FlagSpec::float("population", "1000", "Total population N"),
    FlagSpec::float("exposed", "0", "Initial exposed count"),
    FlagSpec::float("infected", "10", "Initial infected count"),
    FlagSpec::float("recovered", "0", "Initial recovered count"),
    FlagSpec::float("dead", "0", "Initial dead count"),
    FlagSpec::float("beta", "0.3", "Transmission rate (1/day)"),
    FlagSpec::float("sigma", "0.2", "Incubation rate (1/day)"),
    FlagSpec::float("gamma", "0.1", "Recovery rate (1/day)"),
    FlagSpec::float("mu", "0.02", "Fraction of resolved infections that die"),
    FlagSpec::float("dt", "0.5", "Integration step (days)"),
    FlagSpec::float("horizon", "100", "Simulated days"),
];

/// Compartment counts in the order S, E, I, R, D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compartments {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub r: f64,
    pub d: f64,
}

impl Compartments {
    pub fn total(&self) -> f64 {
        self.s + self.e + self.i + self.r + self.d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeirdConfig {
    pub population: f64,
    pub initial: Compartments,
    pub beta: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub mu: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl Default for SeirdConfig {
    fn default() -> Self {
        Self::from_args(&Args::parse::<&str>(FLAGS, &[]).expect("defaults parse")).expect("defaults are valid")
    }
}

impl SeirdConfig {
    /// Susceptibles are whatever remains of the population.
    pub fn from_args(args: &Args) -> Result<Self, ConfigError> {
        let population = args.float("population");
        let (e, i, r, d) = (
            args.float("exposed"),
            args.float("infected"),
            args.float("recovered"),
            args.float("dead"),
        );
        let cfg = Self {
            population,
            initial: Compartments {
                s: population - e - i - r - d,
                e,
                i,
                r,
                d,
            },
            beta: args.float("beta"),
            sigma: args.float("sigma"),
            gamma: args.float("gamma"),
            mu: args.float("mu"),
            dt: args.float("dt"),
            horizon: args.float("horizon"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.population > 0.0) {
            return bad(format!("population must be > 0, got {}", self.population));
        }
        let c = &self.initial;
        if [c.s, c.e, c.i, c.r, c.d].iter().any(|v| *v < 0.0) {
            return bad("initial compartments must be non-negative and fit in the population".into());
        }
        if (c.total() - self.population).abs() > 1e-9 * self.population {
            return bad("initial compartments must sum to the population".into());
        }
        if [self.beta, self.sigma, self.gamma].iter().any(|v| *v < 0.0) {
            return bad("rates must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return bad(format!("mu must lie in [0, 1], got {}", self.mu));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.horizon >= 0.0) {
            return bad(format!("horizon must be >= 0, got {}", self.horizon));
        }
        Ok(())
    }
}

struct Population {
    n: f64,
    state: Compartments,
    beta: f64,
    sigma: f64,
    gamma: f64,
    mu: f64,
    dt: f64,
    step: u64,
}

impl Population {
    fn record(&self, ctx: &mut Context<'_>) {
        let c = &self.state;
        ctx.log(
            "state",
            payload(json!({"step": self.step, "S": c.s, "E": c.e, "I": c.i, "R": c.r, "D": c.d})),
        );
    }

    fn schedule(&self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        let at = SimTime::new((self.step + 1) as f64 * self.dt)?;
        ctx.hold_until("stepping", at)
    }

    fn advance(&mut self) {
        let c = self.state;
        let infection = self.beta * c.s * c.i / self.n * self.dt;
        let onset = self.sigma * c.e * self.dt;
        let resolved = self.gamma * c.i * self.dt;
        let deaths = self.mu * resolved;
        self.state = Compartments {
            s: c.s - infection,
            e: c.e + infection - onset,
            i: c.i + onset - resolved,
            r: c.r + (resolved - deaths),
            d: c.d + deaths,
        };
        self.step += 1;
    }
}

impl Atomic for Population {
    fn initialize(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        self.record(ctx);
        self.schedule(ctx)
    }

    fn delta_int(&mut self, ctx: &mut Context<'_>) -> Result<(), KernelError> {
        self.advance();
        self.record(ctx);
        self.schedule(ctx)
    }

    fn delta_ext(&mut self, _: &mut Context<'_>, _: f64, _: &Inputs<'_>) -> Result<(), KernelError> {
        Ok(())
    }

    fn output(&self, _: &Status<'_>, _: &mut Outputs<'_>) {}
}

pub fn build(cfg: &SeirdConfig) -> Result<Built, ConfigError> {
    cfg.validate()?;
    let model = AtomicModel::new(
        "population",
        Population {
            n: cfg.population,
            state: cfg.initial,
            beta: cfg.beta,
            sigma: cfg.sigma,
            gamma: cfg.gamma,
            mu: cfg.mu,
            dt: cfg.dt,
            step: 0,
        },
    )
    .map_err(|e| ConfigError::Invalid(e.to_string()))?
    .with_entity("seird");
    let mut root = CoupledModel::new("epidemic").map_err(|e| ConfigError::Invalid(e.to_string()))?;
    root.add_component(model)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(Built {
        root,
        exogenous: Vec::new(),
        horizon: cfg.horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::run_built;
    use crate::trace::TraceRecord;

    fn compartments(r: &TraceRecord) -> [f64; 5] {
        ["S", "E", "I", "R", "D"].map(|k| r.get_f64(k).unwrap())
    }

    fn config(tokens: &[&str]) -> SeirdConfig {
        SeirdConfig::from_args(&Args::parse(FLAGS, tokens).unwrap()).unwrap()
    }

    #[test]
    fn hand_computed_first_step() {
        let cfg = config(&["--exposed", "0", "--infected", "10", "--horizon", "0.5"]);
        let records = run_built(build(&cfg).unwrap()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].time, 0.5);
        assert!((records[1].get_f64("S").unwrap() - 988.515).abs() < 1e-12);
    }

    #[test]
    fn no_infection_stays_constant() {
        let cfg = config(&[
            "--infected",
            "0",
            "--exposed",
            "0",
            "--recovered",
            "5",
            "--horizon",
            "20",
        ]);
        let records = run_built(build(&cfg).unwrap()).unwrap();
        assert_eq!(records.len(), 41);
        for r in &records {
            assert_eq!(compartments(r), [995.0, 0.0, 0.0, 5.0, 0.0]);
        }
    }

    #[test]
    fn without_transmission_infected_decay_geometrically() {
        let cfg = config(&["--beta", "0", "--horizon", "5", "--dt", "1"]);
        let records = run_built(build(&cfg).unwrap()).unwrap();
        let mut expected = 10.0;
        for r in &records {
            assert_eq!(r.get_f64("S"), Some(990.0));
            assert!((r.get_f64("I").unwrap() - expected).abs() < 1e-12);
            expected *= 1.0 - 0.1;
        }
    }

    #[test]
    fn step_times_are_multiples_of_dt() {
        let cfg = config(&["--dt", "0.1", "--horizon", "3"]);
        let records = run_built(build(&cfg).unwrap()).unwrap();
        for (k, r) in records.iter().enumerate() {
            assert_eq!(r.time, k as f64 * 0.1);
            assert_eq!(r.get_i64("step"), Some(k as i64));
        }
    }

    #[test]
    fn invalid_configs() {
        let parse = |t: &[&str]| SeirdConfig::from_args(&Args::parse(FLAGS, t).unwrap());
        assert!(parse(&["--infected", "2000"]).is_err());
        assert!(parse(&["--dt", "0"]).is_err());
        assert!(parse(&["--mu", "1.5"]).is_err());
        assert!(parse(&["--beta", "-1"]).is_err());
    }
}
