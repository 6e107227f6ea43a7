//! Discrete states: a vector function on the uniform grid `x_i = i/Nx` at one
//! time, and a uniformly spaced sequence of such states.

use std::io::{Read, Write};

use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"HYPD";
const BINARY_VERSION: u32 = 1;

/// `n` components sampled at `Nx + 1` nodes; component-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    n: usize,
    nx: usize,
    pub t: f64,
    data: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(n: usize, nx: usize, t: f64) -> Self {
        GridFunction { n, nx, t, data: vec![0.0; n * (nx + 1)] }
    }

    pub fn from_data(n: usize, nx: usize, t: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * (nx + 1) {
            return Err(Error::Config(format!(
                "grid data has {} values, expected {}",
                data.len(),
                n * (nx + 1)
            )));
        }
        Ok(GridFunction { n, nx, t, data })
    }

    pub fn from_fn(n: usize, nx: usize, t: f64, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let mut g = GridFunction::zeros(n, nx, t);
        for j in 0..n {
            for i in 0..=nx {
                g.data[j * (nx + 1) + i] = f(j, i as f64 / nx as f64);
            }
        }
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.nx as f64
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.data[j * (self.nx + 1) + i]
    }

    #[inline]
    pub fn set(&mut self, j: usize, i: usize, v: f64) {
        self.data[j * (self.nx + 1) + i] = v;
    }

    pub fn component(&self, j: usize) -> &[f64] {
        &self.data[j * (self.nx + 1)..(j + 1) * (self.nx + 1)]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Trapezoid-rule L^2((0,1); R^n) norm.
    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.data, self.n, self.nx)
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Piecewise-linear value of component `j` at `x`, clamped to `[0,1]`.
    pub fn value_at(&self, j: usize, x: f64) -> f64 {
        let comp = self.component(j);
        let s = (x.clamp(0.0, 1.0) * self.nx as f64).min(self.nx as f64);
        let i = (s.floor() as usize).min(self.nx - 1);
        let w = s - i as f64;
        comp[i] * (1.0 - w) + comp[i + 1] * w
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        GridFunction { n: self.n, nx: self.nx, t: self.t, data }
    }
}

/// Trapezoid-rule L^2 norm of a component-major vector.
pub fn l2_norm(data: &[f64], n: usize, nx: usize) -> f64 {
    let dx = 1.0 / nx as f64;
    let mut acc = 0.0;
    for j in 0..n {
        let comp = &data[j * (nx + 1)..(j + 1) * (nx + 1)];
        for (i, v) in comp.iter().enumerate() {
            let w = if i == 0 || i == nx { 0.5 } else { 1.0 };
            acc += w * v * v;
        }
    }
    (acc * dx).sqrt()
}

/// Grid functions at `t0, t0 + dt, ...`. When `periodic` is set the last level
/// is the first one shifted by one period and evaluation wraps in time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    levels: Vec<GridFunction>,
    dt: f64,
    pub periodic: bool,
}

impl SpaceTimeField {
    pub fn new(levels: Vec<GridFunction>, periodic: bool) -> Result<Self> {
        let Some(first) = levels.first() else {
            return Err(Error::Config("a space-time field needs at least one level".into()));
        };
        let dt = if levels.len() > 1 { levels[1].t - levels[0].t } else { 0.0 };
        for (k, lvl) in levels.iter().enumerate() {
            if lvl.n != first.n || lvl.nx != first.nx {
                return Err(Error::Config("levels differ in shape".into()));
            }
            let expected = first.t + k as f64 * dt;
            if (lvl.t - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
                return Err(Error::Config(format!("level {k} breaks uniform time spacing")));
            }
        }
        if periodic && levels.len() < 2 {
            return Err(Error::Config("a periodic field needs at least two levels".into()));
        }
        Ok(SpaceTimeField { levels, dt, periodic })
    }

    /// All-zero field on `[t0, t0 + steps*dt]`.
    pub fn zeros(n: usize, nx: usize, t0: f64, dt: f64, steps: usize, periodic: bool) -> Self {
        let levels = (0..=steps).map(|k| GridFunction::zeros(n, nx, t0 + k as f64 * dt)).collect();
        SpaceTimeField { levels, dt, periodic }
    }

    pub fn levels(&self) -> &[GridFunction] {
        &self.levels
    }

    pub fn first(&self) -> &GridFunction {
        &self.levels[0]
    }

    pub fn last(&self) -> &GridFunction {
        self.levels.last().expect("non-empty")
    }

    pub fn n(&self) -> usize {
        self.levels[0].n
    }

    pub fn nx(&self) -> usize {
        self.levels[0].nx
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.levels[0].t
    }

    pub fn span(&self) -> f64 {
        self.dt * (self.levels.len() - 1) as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.levels.iter().fold(0.0, |m, l| m.max(l.sup_norm()))
    }

    /// Bilinear interpolation of all components at `(x, t)` into `out`.
    pub fn state_at(&self, x: f64, t: f64, out: &mut [f64]) {
        let last = self.levels.len() - 1;
        if last == 0 || self.dt <= 0.0 {
            for (j, o) in out.iter_mut().enumerate() {
                *o = self.levels[0].value_at(j, x);
            }
            return;
        }
        let mut rel = t - self.t0();
        if self.periodic {
            rel = rel.rem_euclid(self.span());
        }
        let s = (rel / self.dt).clamp(0.0, last as f64);
        let k = (s.floor() as usize).min(last - 1);
        let w = s - k as f64;
        let (a, b) = (&self.levels[k], &self.levels[k + 1]);
        for (j, o) in out.iter_mut().enumerate() {
            *o = a.value_at(j, x) * (1.0 - w) + b.value_at(j, x) * w;
        }
    }

    /// Rows `t,x,u1..un`, one per (level, node).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.n();
        let mut header = String::from("t,x");
        for j in 1..=n {
            header.push_str(&format!(",u{j}"));
        }
        writeln!(w, "{header}")?;
        for lvl in &self.levels {
            for i in 0..=lvl.nx {
                write!(w, "{},{}", lvl.t, lvl.x(i))?;
                for j in 0..n {
                    write!(w, ",{}", lvl.get(j, i))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Little-endian dump:
    ///
    /// ```text
    /// magic "HYPD" | u32 version (=1) | u64 n | u64 nx | u64 levels | u8 periodic
    /// then per level: f64 t, followed by n*(nx+1) f64 values, component-major
    /// ```
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.nx() as u64).to_le_bytes())?;
        w.write_all(&(self.levels.len() as u64).to_le_bytes())?;
        w.write_all(&[self.periodic as u8])?;
        for lvl in &self.levels {
            w.write_all(&lvl.t.to_le_bytes())?;
            for v in &lvl.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Config("not a space-time field dump".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != BINARY_VERSION {
            return Err(Error::Config("unsupported dump version".into()));
        }
        let read_u64 = |r: &mut R| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let n = read_u64(&mut r)? as usize;
        let nx = read_u64(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let read_f64 = |r: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let mut levels = Vec::with_capacity(count);
        for _ in 0..count {
            let t = read_f64(&mut r)?;
            let data = (0..n * (nx + 1)).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            levels.push(GridFunction { n, nx, t, data });
        }
        SpaceTimeField::new(levels, flag[0] != 0)
    }
}
