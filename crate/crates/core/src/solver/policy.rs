use crate::artifact::Stamp;
use crate::grid::GridSpec;
use std::fmt::Write as _;

pub const POLICY_FORMAT: &str = "ras-policy";

/// Greedy minimax policy stored per grid node: the maximizing lattice control
/// and the adversarial disturbance minimizing against it.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    spec: GridSpec,
    controls: Vec<Vec<f64>>,
    disturbances: Vec<Vec<f64>>,
    control_index: Vec<u32>,
    disturbance_index: Vec<u32>,
}

impl TabularPolicy {
    pub fn new(
        spec: GridSpec,
        controls: Vec<Vec<f64>>,
        disturbances: Vec<Vec<f64>>,
        control_index: Vec<u32>,
        disturbance_index: Vec<u32>,
    ) -> Self {
        assert_eq!(control_index.len(), spec.len());
        assert_eq!(disturbance_index.len(), spec.len());
        assert!(control_index.iter().all(|&i| (i as usize) < controls.len()));
        assert!(disturbance_index
            .iter()
            .all(|&i| (i as usize) < disturbances.len()));
        Self {
            spec,
            controls,
            disturbances,
            control_index,
            disturbance_index,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn disturbances(&self) -> &[Vec<f64>] {
        &self.disturbances
    }

    pub fn control_index(&self, node: usize) -> usize {
        self.control_index[node] as usize
    }

    pub fn disturbance_index(&self, node: usize) -> usize {
        self.disturbance_index[node] as usize
    }

    pub fn control_at(&self, node: usize) -> &[f64] {
        &self.controls[self.control_index(node)]
    }

    pub fn disturbance_at(&self, node: usize) -> &[f64] {
        &self.disturbances[self.disturbance_index(node)]
    }

    /// Stored control and disturbance of the node nearest to `x`.
    pub fn lookup(&self, x: &[f64]) -> (&[f64], &[f64]) {
        let node = self.spec.nearest_node(x);
        (self.control_at(node), self.disturbance_at(node))
    }

    /// CSV form: one row per node with lattice indices and input values.
    pub fn to_csv(&self, stamp: Option<&Stamp>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {POLICY_FORMAT},1");
        if let Some(st) = stamp {
            let _ = writeln!(s, "# config_hash,{}", st.config_hash);
            let _ = writeln!(s, "# master_seed,{}", st.master_seed);
        }
        for a in self.spec.axes() {
            let _ = writeln!(s, "# axis,{},{},{}", a.lower, a.upper, a.count);
        }
        let mu = self.controls.first().map_or(0, Vec::len);
        let md = self.disturbances.first().map_or(0, Vec::len);
        let mut header = vec!["node".to_string(), "u_index".into(), "d_index".into()];
        header.extend((0..mu).map(|i| format!("u{i}")));
        header.extend((0..md).map(|i| format!("d{i}")));
        let _ = writeln!(s, "{}", header.join(","));
        for node in 0..self.spec.len() {
            let _ = write!(
                s,
                "{node},{},{}",
                self.control_index[node], self.disturbance_index[node]
            );
            for v in self
                .control_at(node)
                .iter()
                .chain(self.disturbance_at(node))
            {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}
