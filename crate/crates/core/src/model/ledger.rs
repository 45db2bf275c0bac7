use serde::{Deserialize, Serialize};

pub const DEFAULT_BUDGET: f64 = 3.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("cost budget exhausted: ${dollars:.6} spent of ${budget:.2}")]
pub struct BudgetExceeded {
    pub dollars: f64,
    pub budget: f64,
}

/// Running token and dollar totals for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub dollars: f64,
    pub budget: f64,
    /// Dollars per input token.
    pub price_in: f64,
    /// Dollars per output token.
    pub price_out: f64,
}

impl CostLedger {
    pub fn new(budget: f64, price_in: f64, price_out: f64) -> Self {
        CostLedger {
            tokens_in: 0,
            tokens_out: 0,
            dollars: 0.0,
            budget,
            price_in,
            price_out,
        }
    }

    pub fn cost_of(&self, usage: Usage) -> f64 {
        usage.tokens_in as f64 * self.price_in + usage.tokens_out as f64 * self.price_out
    }

    /// Whether another query may be issued.
    pub fn can_query(&self) -> bool {
        self.dollars < self.budget
    }

    /// Adds `usage`. The charge is always recorded; the error reports that
    /// the budget is now used up.
    pub fn charge(&mut self, usage: Usage) -> Result<(), BudgetExceeded> {
        self.tokens_in += usage.tokens_in;
        self.tokens_out += usage.tokens_out;
        self.dollars =
            self.tokens_in as f64 * self.price_in + self.tokens_out as f64 * self.price_out;
        if self.dollars >= self.budget {
            Err(BudgetExceeded {
                dollars: self.dollars,
                budget: self.budget,
            })
        } else {
            Ok(())
        }
    }
}
