use crate::error::{invalid, Result};

/// Open ball `B(center, radius)` used as a stopping domain.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid(format!("stopping ball needs radius > 0, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn centered(d: usize, radius: f64) -> Result<Self> {
        Self::new(vec![0.0; d], radius)
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        let r2: f64 = z.iter().zip(&self.center).map(|(x, c)| (x - c) * (x - c)).sum();
        r2 < self.radius * self.radius
    }
}

/// A bundle of simulated paths on a common time grid.
///
/// States are stored path-major: `states[(p * n_times + i) * dim + c]`.
/// Paths are identified by their global index `first_path + p`, which also
/// selects their random stream, so ensembles simulated in chunks concatenate
/// to exactly the ensemble simulated in one piece.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// First exit time from the stopping domain; `None` stands for +∞.
    pub exit_time: Vec<Option<f64>>,
    pub stopped: Vec<bool>,
    /// Paths frozen after a non-finite coefficient or a state norm above the divergence cap.
    pub diverged: Vec<bool>,
    /// Largest `|Z_t|` seen on the simulation grid (finer than `times` when recording at a stride).
    pub peak_norm: Vec<f64>,
    pub seed: u64,
    pub first_path: u64,
    pub scheme_tag: String,
    /// Simulation step (the recorded grid may be coarser).
    pub step: f64,
    pub z0: Vec<f64>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.stopped.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn state(&self, path: usize, time: usize) -> &[f64] {
        let off = (path * self.n_times() + time) * self.dim;
        &self.states[off..off + self.dim]
    }

    /// All states of one path, time-major.
    pub fn path(&self, path: usize) -> &[f64] {
        let len = self.n_times() * self.dim;
        &self.states[path * len..(path + 1) * len]
    }

    pub fn diverged_fraction(&self) -> f64 {
        if self.n_paths() == 0 {
            return 0.0;
        }
        self.diverged.iter().filter(|&&x| x).count() as f64 / self.n_paths() as f64
    }

    /// Concatenate consecutive chunks of the same run.
    pub fn concat(chunks: Vec<PathEnsemble>) -> Result<PathEnsemble> {
        let mut it = chunks.into_iter();
        let Some(mut out) = it.next() else {
            return Err(invalid("concat needs at least one chunk"));
        };
        for c in it {
            if c.times != out.times || c.dim != out.dim || c.seed != out.seed || c.scheme_tag != out.scheme_tag {
                return Err(invalid("concat: chunks come from different runs"));
            }
            if c.first_path != out.first_path + out.n_paths() as u64 {
                return Err(invalid("concat: chunks are not consecutive"));
            }
            out.states.extend_from_slice(&c.states);
            out.exit_time.extend_from_slice(&c.exit_time);
            out.stopped.extend_from_slice(&c.stopped);
            out.diverged.extend_from_slice(&c.diverged);
            out.peak_norm.extend_from_slice(&c.peak_norm);
        }
        Ok(out)
    }

    /// CSV header: `path_id,t,z_1..z_d,stopped`.
    pub fn csv_header(&self) -> String {
        let mut h = String::from("path_id,t");
        for c in 1..=self.dim {
            h.push_str(&format!(",z_{c}"));
        }
        h.push_str(",stopped");
        h
    }

    /// One row per (path, recorded time). Floats use the shortest decimal that
    /// round-trips; `stopped` is 1 from the exit time on.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        let mut line = String::new();
        for p in 0..self.n_paths() {
            let id = self.first_path + p as u64;
            for (i, &t) in self.times.iter().enumerate() {
                line.clear();
                line.push_str(&format!("{id},{t}"));
                for x in self.state(p, i) {
                    line.push_str(&format!(",{x}"));
                }
                let stopped = self.exit_time[p].is_some_and(|tau| t >= tau);
                line.push_str(if stopped { ",1" } else { ",0" });
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    /// Stop every path at the first recorded grid time outside `domain`.
    ///
    /// A path starting outside the closure of the domain gets `exit_time = 0`.
    /// States after the exit time are overwritten with the exit state.
    pub fn stop_on_exit(&self, domain: &Ball) -> Result<PathEnsemble> {
        if domain.center.len() != self.dim {
            return Err(invalid("stopping domain dimension does not match ensemble"));
        }
        let mut out = self.clone();
        let nt = self.n_times();
        let d = self.dim;
        for p in 0..self.n_paths() {
            if out.stopped[p] {
                continue;
            }
            let exit = (0..nt).find(|&i| !domain.contains(self.state(p, i)));
            if let Some(i) = exit {
                out.stopped[p] = true;
                out.exit_time[p] = Some(self.times[i]);
                let base = p * nt * d;
                let frozen: Vec<f64> = self.state(p, i).to_vec();
                for j in i + 1..nt {
                    out.states[base + j * d..base + (j + 1) * d].copy_from_slice(&frozen);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> PathEnsemble {
        // 2 paths on 4 times in 1-d
        PathEnsemble {
            dim: 1,
            times: vec![0.0, 1.0, 2.0, 3.0],
            states: vec![0.0, 0.5, 2.0, 0.1, 0.0, 0.2, 0.3, 0.4],
            exit_time: vec![None; 2],
            stopped: vec![false; 2],
            diverged: vec![false; 2],
            peak_norm: vec![2.0, 0.4],
            seed: 1,
            first_path: 0,
            scheme_tag: "toy".into(),
            step: 1.0,
            z0: vec![0.0],
        }
    }

    #[test]
    fn csv_rows_and_stop_flag() {
        let e = toy().stop_on_exit(&Ball::centered(1, 1.0).unwrap()).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path_id,t,z_1,stopped");
        assert_eq!(lines.len(), 1 + 8);
        assert_eq!(&lines[1..5], ["0,0,0,0", "0,1,0.5,0", "0,2,2,1", "0,3,2,1"]);
        assert_eq!(lines[8], "1,3,0.4,0");
    }

    #[test]
    fn stopping_freezes_after_exit() {
        let s = toy().stop_on_exit(&Ball::new(vec![0.0], 1.0).unwrap()).unwrap();
        assert_eq!(s.exit_time, vec![Some(2.0), None]);
        assert_eq!(s.path(0), &[0.0, 0.5, 2.0, 2.0]);
        assert_eq!(s.path(1), toy().path(1));
    }

    #[test]
    fn start_outside_exits_at_zero() {
        let s = toy().stop_on_exit(&Ball::new(vec![5.0], 1.0).unwrap()).unwrap();
        assert!(s.exit_time.iter().all(|t| *t == Some(0.0)));
        assert!(s.path(0).iter().all(|&x| x == 0.0));
    }
}
