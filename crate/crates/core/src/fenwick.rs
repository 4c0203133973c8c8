/// Binary indexed tree over non-negative `f64` weights with
/// inverse-prefix search. Slots are 0-based externally.
#[derive(Debug, Clone)]
pub struct Fenwick {
    tree: Vec<f64>,
    raw: Vec<f64>,
}

impl Fenwick {
    pub fn with_capacity(cap: usize) -> Self {
        let cap = cap.max(1).next_power_of_two();
        Self {
            tree: vec![0.0; cap + 1],
            raw: vec![0.0; cap],
        }
    }

    pub fn capacity(&self) -> usize {
        self.raw.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.raw[i]
    }

    /// Sets slot `i`, growing the structure if needed.
    pub fn set(&mut self, i: usize, w: f64) {
        if i >= self.capacity() {
            self.grow(i + 1);
        }
        let delta = w - self.raw[i];
        self.raw[i] = w;
        let mut j = i + 1;
        while j < self.tree.len() {
            self.tree[j] += delta;
            j += j & j.wrapping_neg();
        }
    }

    pub fn total(&self) -> f64 {
        self.tree[self.capacity()]
    }

    /// Recomputes internal sums from the raw weights, discarding
    /// accumulated rounding drift.
    pub fn rebuild(&mut self) {
        let n = self.capacity();
        self.tree.iter_mut().for_each(|v| *v = 0.0);
        for i in 1..=n {
            self.tree[i] += self.raw[i - 1];
            let p = i + (i & i.wrapping_neg());
            if p <= n {
                let v = self.tree[i];
                self.tree[p] += v;
            }
        }
    }

    fn grow(&mut self, need: usize) {
        let cap = need.next_power_of_two();
        self.raw.resize(cap, 0.0);
        self.tree = vec![0.0; cap + 1];
        self.rebuild();
    }

    /// Smallest slot `i` with `prefix(i) > u`, where `prefix(i)` sums
    /// slots `0..=i`. Returns the last slot if `u` exceeds the total.
    pub fn search(&self, mut u: f64) -> usize {
        let n = self.capacity();
        let mut pos = 0;
        let mut step = n;
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= u {
                u -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }
}
