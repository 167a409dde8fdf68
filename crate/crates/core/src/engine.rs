//! Sequential test driver.
//!
//! An [`AuditSession`] plays one or more betting games over a record stream:
//!
//! * two groups, non-composite strategy: a single game at threshold `1/alpha`;
//! * composite null: twin one-sided games `Q` and `R`, each at `2/alpha`;
//! * `J + 1` groups: one game per adjacent pair `(b, b+1)`, each at `J/alpha`.
//!
//! The session rejects the first time any game's wealth reaches its threshold.
//! If the stream ends first, [`AuditSession::finalize`] may perform the
//! randomized terminal check `K >= U * threshold` exactly once, with `U` drawn
//! from a generator stream reserved for that purpose.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::betting::{BetDomain, BettorState, MAX_BET};
use crate::error::{AuditError, Result};
use crate::payoffs::{
    payoff_composite, payoff_estimated_density, payoff_propensity, payoff_simple, BatchAccumulator,
    EstimatedDensityContext, Payoff, PropensityContext,
};
use crate::types::{
    AuditConfig, AuditRecord, AuditReport, Decision, DecisionKind, GameReport, PayoffStrategy,
    TrajectoryPoint, WealthState,
};

/// ChaCha stream index reserved for the terminal uniform draw.
const TERMINAL_DRAW_STREAM: u64 = 0x7465_726d_696e_616c;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GameKind {
    /// Groups `lo` and `lo + 1`.
    Pair {
        lo: usize,
    },
    CompositeQ,
    CompositeR,
}

#[derive(Debug, Clone)]
struct Game {
    id: String,
    kind: GameKind,
    bettor: BettorState,
    wealth: WealthState,
    batch: Option<BatchAccumulator>,
}

#[derive(Debug, Clone)]
pub struct AuditSession {
    config: AuditConfig,
    games: Vec<Game>,
    status: Decision,
    rejecting_game: Option<usize>,
    last_t: Vec<Option<u64>>,
    steps: u64,
    log_threshold: f64,
    trajectory: Option<Vec<TrajectoryPoint>>,
}

impl AuditSession {
    pub fn new(config: AuditConfig) -> Result<Self> {
        config.validate()?;
        let record = config.record_trajectory;
        let games = match config.strategy {
            PayoffStrategy::Composite { epsilon } => {
                // Each one-sided game is a supermartingale inside its null only
                // for nonnegative bets. The bettors see g / (1 + eps), which lies
                // in [-1, 1], and the realized bet is lambda / (1 + eps).
                BetDomain::composite(epsilon)?;
                let one_sided = BetDomain::new(0.0, MAX_BET)?;
                vec![
                    Game::new("q".into(), GameKind::CompositeQ, one_sided, record, false),
                    Game::new("r".into(), GameKind::CompositeR, one_sided, record, false),
                ]
            }
            strategy => {
                // With delta_min < delta_max the estimated-density payoff has
                // conditional mean at most 1 + lambda B (mu_0 - mu_1) only for
                // lambda >= 0, so the test becomes one-sided.
                let domain = match strategy {
                    PayoffStrategy::EstimatedDensity {
                        delta_min,
                        delta_max,
                        ..
                    } if delta_min < delta_max => BetDomain::new(0.0, MAX_BET)?,
                    _ => BetDomain::DEFAULT,
                };
                (0..config.group_count - 1)
                    .map(|lo| {
                        Game::new(
                            format!("{}-{}", lo, lo + 1),
                            GameKind::Pair { lo },
                            domain,
                            record,
                            strategy == PayoffStrategy::Batched,
                        )
                    })
                    .collect()
            }
        };
        Ok(Self {
            log_threshold: config.threshold().ln(),
            last_t: vec![None; config.group_count],
            trajectory: record.then(Vec::new),
            config,
            games,
            status: Decision::CONTINUE,
            rejecting_game: None,
            steps: 0,
        })
    }

    pub fn config(&self) -> &AuditConfig {
        &self.config
    }

    pub fn status(&self) -> Decision {
        self.status
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Per-game rejection threshold.
    pub fn threshold(&self) -> f64 {
        self.config.threshold()
    }

    pub fn game_ids(&self) -> Vec<&str> {
        self.games.iter().map(|g| g.id.as_str()).collect()
    }

    /// Log wealth of each game.
    pub fn log_wealths(&self) -> Vec<f64> {
        self.games.iter().map(|g| g.wealth.log_wealth).collect()
    }

    /// Largest log wealth across games.
    pub fn log_wealth(&self) -> f64 {
        self.games
            .iter()
            .map(|g| g.wealth.log_wealth)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn wealth(&self) -> f64 {
        self.log_wealth().exp()
    }

    pub fn bettor(&self, game: usize) -> Option<&BettorState> {
        self.games.get(game).map(|g| &g.bettor)
    }

    pub fn wealth_state(&self, game: usize) -> Option<&WealthState> {
        self.games.get(game).map(|g| &g.wealth)
    }

    /// Id of the game whose wealth triggered rejection.
    pub fn rejecting_game(&self) -> Option<&str> {
        self.rejecting_game.map(|i| self.games[i].id.as_str())
    }

    /// Processes one round: one record per group, or a single record in
    /// batched mode.
    pub fn step(&mut self, records: &[AuditRecord]) -> Result<Decision> {
        self.step_with_scale(records, None)
    }

    /// Like [`step`](Self::step), overriding the configured propensity or
    /// estimated-density scale for this round only. The override must be
    /// fixed before the round's records are seen.
    pub fn step_with_scale(
        &mut self,
        records: &[AuditRecord],
        scale: Option<f64>,
    ) -> Result<Decision> {
        if self.status.kind.is_terminal() {
            return Err(AuditError::State(format!(
                "session already terminated ({:?})",
                self.status.kind
            )));
        }
        if let Some(s) = scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(AuditError::Config(format!("scale must be > 0, got {s}")));
            }
        }
        let bundle = self.validate_bundle(records)?;

        // Compute every payoff before mutating anything so a failing round
        // leaves the session untouched.
        let strategy = self.config.strategy;
        let mut staged = Vec::with_capacity(self.games.len());
        match strategy {
            PayoffStrategy::Composite { epsilon } => {
                let (r0, r1) = (bundle[0].unwrap(), bundle[1].unwrap());
                let scale = 1.0 + epsilon;
                let lambda_q = self.games[0].bettor.lambda / scale;
                let lambda_r = self.games[1].bettor.lambda / scale;
                let c = payoff_composite(r0.y_hat, r1.y_hat, epsilon, lambda_q, lambda_r)?;
                staged.push((c.q, Some(c.q.g / scale), None));
                staged.push((c.r, Some(c.r.g / scale), None));
            }
            PayoffStrategy::Batched => {
                let record = records[0];
                for game in &self.games {
                    let GameKind::Pair { lo } = game.kind else {
                        unreachable!()
                    };
                    let mut acc = game.batch.clone().unwrap_or_default();
                    let g = record.group.index();
                    if g == lo || g == lo + 1 {
                        acc.push_side(g - lo, record.y_hat)?;
                    }
                    let fired = acc.is_ready();
                    let payoff = acc.payoff(game.bettor.lambda)?;
                    staged.push((payoff, fired.then_some(payoff.g), Some(acc)));
                }
            }
            _ => {
                for game in &self.games {
                    let GameKind::Pair { lo } = game.kind else {
                        unreachable!()
                    };
                    let (r0, r1) = (bundle[lo].unwrap(), bundle[lo + 1].unwrap());
                    let payoff = pair_payoff(strategy, &r0, &r1, game.bettor.lambda, scale)?;
                    staged.push((payoff, Some(payoff.g), None));
                }
            }
        }
        let mut next_bettors = Vec::with_capacity(staged.len());
        for (game, (_, bettor_g, _)) in self.games.iter().zip(&staged) {
            next_bettors.push(match bettor_g {
                Some(g) => game.bettor.update(*g)?,
                None => game.bettor,
            });
        }

        for r in records {
            self.last_t[r.group.index()] = Some(r.t);
        }
        self.steps += 1;
        for ((game, (payoff, _, acc)), bettor) in
            self.games.iter_mut().zip(staged).zip(next_bettors)
        {
            game.wealth.apply(payoff.value, payoff.g)?;
            game.bettor = bettor;
            if acc.is_some() {
                game.batch = acc;
            }
        }
        let log_max = self.log_wealth();
        if let Some(trajectory) = self.trajectory.as_mut() {
            trajectory.push(TrajectoryPoint {
                step: self.steps,
                wealth: log_max.exp(),
                log_wealth: log_max,
            });
        }
        if let Some(i) = self
            .games
            .iter()
            .position(|g| g.wealth.log_wealth >= self.log_threshold)
        {
            self.rejecting_game = Some(i);
            self.status = Decision {
                kind: DecisionKind::Reject,
                tau: Some(self.steps),
                u_draw: None,
            };
        }
        Ok(self.status)
    }

    fn validate_bundle(&self, records: &[AuditRecord]) -> Result<Vec<Option<AuditRecord>>> {
        let groups = self.config.group_count;
        let expected = if self.config.strategy == PayoffStrategy::Batched {
            1
        } else {
            groups
        };
        if records.len() != expected {
            return Err(AuditError::Domain(format!(
                "expected {expected} record(s) per step, got {}",
                records.len()
            )));
        }
        let mut bundle = vec![None; groups];
        for r in records {
            r.validate()?;
            let g = r.group.check(groups)?.index();
            if bundle[g].is_some() {
                return Err(AuditError::Domain(format!(
                    "group {g} appears twice in one step"
                )));
            }
            if let Some(prev) = self.last_t[g] {
                if r.t <= prev {
                    return Err(AuditError::Domain(format!(
                        "time index {} for group {g} does not increase (previous {prev})",
                        r.t
                    )));
                }
            }
            bundle[g] = Some(*r);
        }
        Ok(bundle)
    }

    /// Randomized terminal check: rejects if the leading wealth is at least
    /// `U` times the threshold. Allowed once, and only on a session that has
    /// not already rejected.
    pub fn finalize(&mut self) -> Result<AuditReport> {
        if !self.config.randomized_final_step {
            return Err(AuditError::State(
                "randomized terminal step is disabled for this session".into(),
            ));
        }
        if self.status.kind.is_terminal() {
            return Err(AuditError::State(format!(
                "terminal step refused: session already {:?}",
                self.status.kind
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(self.config.seed);
        rng.set_stream(TERMINAL_DRAW_STREAM);
        let u: f64 = rng.sample(Open01);
        let leader = self
            .games
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.wealth.log_wealth.total_cmp(&b.1.wealth.log_wealth))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let rejects = self.log_wealth() >= u.ln() + self.log_threshold;
        self.status = Decision {
            kind: if rejects {
                DecisionKind::FinalRandomizedReject
            } else {
                DecisionKind::FinalFailToReject
            },
            tau: Some(self.steps),
            u_draw: Some(u),
        };
        if rejects {
            self.rejecting_game = Some(leader);
        }
        Ok(self.report())
    }

    /// Snapshot of the session as a report.
    pub fn report(&self) -> AuditReport {
        let log_wealth = self.log_wealth();
        let per_game = (self.games.len() > 1).then(|| {
            self.games
                .iter()
                .map(|g| GameReport {
                    game: g.id.clone(),
                    wealth_final: g.wealth.wealth(),
                    log_wealth_final: g.wealth.log_wealth,
                    trajectory: g.wealth.trajectory.clone().unwrap_or_default(),
                })
                .collect()
        });
        AuditReport {
            decision: self.status,
            config: self.config.clone(),
            threshold: self.threshold(),
            steps: self.steps,
            wealth_final: log_wealth.exp(),
            log_wealth_final: log_wealth,
            rejecting_game: self.rejecting_game().map(str::to_owned),
            trajectory: self.trajectory.clone().unwrap_or_default(),
            per_game,
        }
    }
}

impl Game {
    fn new(
        id: String,
        kind: GameKind,
        domain: BetDomain,
        record_trajectory: bool,
        batched: bool,
    ) -> Self {
        Self {
            id,
            kind,
            bettor: BettorState {
                domain,
                ..BettorState::default()
            },
            wealth: WealthState::new(record_trajectory),
            batch: batched.then(BatchAccumulator::new),
        }
    }
}

fn pair_payoff(
    strategy: PayoffStrategy,
    r0: &AuditRecord,
    r1: &AuditRecord,
    lambda: f64,
    scale_override: Option<f64>,
) -> Result<Payoff> {
    match strategy {
        PayoffStrategy::Simple => payoff_simple(r0.y_hat, r1.y_hat, lambda),
        PayoffStrategy::Propensity { scale } => {
            let ctx = PropensityContext::from_records(r0, r1, scale_override.unwrap_or(scale))?;
            payoff_propensity(r0.y_hat, r1.y_hat, &ctx, lambda)
        }
        PayoffStrategy::EstimatedDensity {
            delta_min,
            delta_max,
            scale,
        } => {
            let ctx = EstimatedDensityContext::from_records(
                r0,
                r1,
                scale_override.unwrap_or(scale),
                delta_min,
                delta_max,
            )?;
            payoff_estimated_density(r0.y_hat, r1.y_hat, &ctx, lambda)
        }
        PayoffStrategy::Batched | PayoffStrategy::Composite { .. } => unreachable!(),
    }
}

/// Feeds a flat record stream into a session, grouping records into rounds.
///
/// In batched mode every record is its own round. Otherwise records are
/// collected until every group has exactly one, and a group repeating before
/// the round completes is an error.
#[derive(Debug)]
pub struct StreamAuditor {
    session: AuditSession,
    round: Vec<Option<AuditRecord>>,
}

impl StreamAuditor {
    pub fn new(config: AuditConfig) -> Result<Self> {
        let groups = config.group_count;
        Ok(Self {
            session: AuditSession::new(config)?,
            round: vec![None; groups],
        })
    }

    pub fn session(&self) -> &AuditSession {
        &self.session
    }

    pub fn is_done(&self) -> bool {
        self.session.status().kind.is_terminal()
    }

    pub fn push(&mut self, record: AuditRecord) -> Result<Decision> {
        if self.session.config().strategy == PayoffStrategy::Batched {
            return self.session.step(&[record]);
        }
        let g = record.group.check(self.round.len())?.index();
        if self.round[g].is_some() {
            return Err(AuditError::Domain(format!(
                "group {g} repeated at t={} before every group reported",
                record.t
            )));
        }
        self.round[g] = Some(record);
        if self.round.iter().all(Option::is_some) {
            let records: Vec<AuditRecord> =
                self.round.iter_mut().map(|r| r.take().unwrap()).collect();
            self.session.step(&records)
        } else {
            Ok(self.session.status())
        }
    }

    /// Ends the stream, running the randomized terminal step when enabled and
    /// the session has not already rejected.
    pub fn finish(mut self) -> Result<AuditReport> {
        let leftover = self.round.iter().filter(|r| r.is_some()).count();
        if leftover > 0 && !self.is_done() {
            log::warn!("{leftover} record(s) from an incomplete final round were not audited");
        }
        if !self.is_done() && self.session.config().randomized_final_step {
            self.session.finalize()
        } else {
            Ok(self.session.report())
        }
    }
}

/// Audits a whole stream; stops consuming at the first rejection.
pub fn run_stream<I>(config: AuditConfig, stream: I) -> Result<AuditReport>
where
    I: IntoIterator<Item = AuditRecord>,
{
    let mut auditor = StreamAuditor::new(config)?;
    for record in stream {
        if auditor.push(record)?.kind.is_terminal() {
            break;
        }
    }
    auditor.finish()
}
