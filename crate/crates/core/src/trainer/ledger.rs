/// Exact count of sampled responses, per step and in total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RolloutLedger {
    per_step: Vec<u64>,
    total: u64,
    selections: Vec<u64>,
}

impl RolloutLedger {
    pub fn new(num_instances: usize) -> Self {
        Self {
            per_step: Vec::new(),
            total: 0,
            selections: vec![0; num_instances],
        }
    }

    /// Records one step's rollout count and the instances it updated.
    pub fn record_step(&mut self, rollouts: u64, updated: &[usize]) {
        self.per_step.push(rollouts);
        self.total += rollouts;
        for &id in updated {
            self.selections[id] += 1;
        }
    }

    pub fn per_step(&self) -> &[u64] {
        &self.per_step
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn steps(&self) -> usize {
        self.per_step.len()
    }

    /// How often each instance received a policy update.
    pub fn selections(&self) -> &[u64] {
        &self.selections
    }
}
