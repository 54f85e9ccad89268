use crate::objectives::dominates_values;

/// Constraint domination on raw objective values; `violation` 0 is feasible.
pub fn constrained_dominates_values(a: &[f64; 3], a_violation: f64, b: &[f64; 3], b_violation: f64) -> bool {
    match (a_violation > 0.0, b_violation > 0.0) {
        (false, true) => true,
        (true, false) => false,
        (true, true) => a_violation < b_violation,
        (false, false) => dominates_values(a, b),
    }
}

/// NSGA-II crowding distance of each point; boundary points get infinity.
pub fn crowding_distance(values: &[[f64; 3]]) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..3 {
        order.sort_by(|&a, &b| values[a][k].total_cmp(&values[b][k]).then(a.cmp(&b)));
        let lo = values[order[0]][k];
        let hi = values[order[n - 1]][k];
        d[order[0]] = f64::INFINITY;
        d[order[n - 1]] = f64::INFINITY;
        if hi > lo {
            for w in 1..n - 1 {
                d[order[w]] += (values[order[w + 1]][k] - values[order[w - 1]][k]) / (hi - lo);
            }
        }
    }
    d
}

#[derive(Clone, Debug)]
pub struct Entry<T> {
    pub values: [f64; 3],
    pub violation: f64,
    /// Pinned entries are never removed by truncation.
    pub pinned: bool,
    pub item: T,
}

/// Elitist archive of mutually non-dominated entries under constraint domination.
#[derive(Clone, Debug)]
pub struct Archive<T> {
    capacity: usize,
    entries: Vec<Entry<T>>,
}

impl<T> Archive<T> {
    pub fn new(capacity: usize) -> Self {
        Archive {
            capacity: capacity.max(1),
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<Entry<T>> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when a feasible member dominates or equals `values`: the candidate
    /// would be rejected whatever its constraint violation.
    pub fn screens_out(&self, values: &[f64; 3]) -> bool {
        self.entries
            .iter()
            .any(|e| e.violation <= 0.0 && (e.values == *values || dominates_values(&e.values, values)))
    }

    /// Inserts a candidate unless a member constraint-dominates or duplicates it.
    /// Members the candidate dominates are removed. Returns whether it was kept.
    pub fn insert(&mut self, values: [f64; 3], violation: f64, pinned: bool, item: T) -> bool {
        let rejected = self.entries.iter().any(|e| {
            constrained_dominates_values(&e.values, e.violation, &values, violation)
                || (e.values == values && e.violation == violation)
        });
        if rejected {
            return false;
        }
        self.entries
            .retain(|e| !constrained_dominates_values(&values, violation, &e.values, e.violation));
        self.entries.push(Entry {
            values,
            violation,
            pinned,
            item,
        });
        let mut kept = true;
        while self.entries.len() > self.capacity {
            let values: Vec<[f64; 3]> = self.entries.iter().map(|e| e.values).collect();
            let crowd = crowding_distance(&values);
            let victim = (0..self.entries.len())
                .filter(|&i| !self.entries[i].pinned)
                .min_by(|&a, &b| crowd[a].total_cmp(&crowd[b]).then(b.cmp(&a)));
            let Some(v) = victim else { break };
            if v == self.entries.len() - 1 {
                kept = false;
            }
            self.entries.remove(v);
        }
        kept
    }
}
