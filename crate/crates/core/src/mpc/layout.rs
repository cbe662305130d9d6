//! Variable layout of the prediction problems.
//!
//! The combined vector is `[free; pinned]`. Free variables, in order: `e_x(1..=N)`,
//! `e_u(0..=N)`, `x(1..=N)`, `u(0..=N)`, `y(1..=N)`, then `theta_x`, `theta_u`, `theta_y` and the
//! facet auxiliaries when the artificial reference is enabled. Pinned variables (the history
//! vector `h`), in order: `e_x(0, -1, ..., -n_dx)`, `e_u(-1, ..., -n_du)`,
//! `x(0, ..., -(n_n - 1))`, `y(0, ..., -(n_n - 1))`, `u(-1, ..., -n_n)`.

use crate::linalg::Vector;
use crate::regulation::ArtificialReferenceParam;

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
    pub nn: usize,
    pub ndx: usize,
    pub ndu: usize,
    /// Generator and reference-generator dimensions; zero without artificial reference.
    pub q: usize,
    pub qa: usize,
    pub n_aux: usize,
    pub artref: bool,
    ex_off: usize,
    eu_off: usize,
    x_off: usize,
    u_off: usize,
    y_off: usize,
    tx_off: usize,
    tu_off: usize,
    ty_off: usize,
    aux_off: usize,
    n_free: usize,
    pex_off: usize,
    peu_off: usize,
    px_off: usize,
    py_off: usize,
    pu_off: usize,
    n_pinned: usize,
}

impl Layout {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        m: usize,
        p: usize,
        horizon: usize,
        nn: usize,
        ndx: usize,
        ndu: usize,
        artref: Option<(usize, usize, usize)>,
    ) -> Self {
        let big_n = horizon;
        let ex_off = 0;
        let eu_off = ex_off + n * big_n;
        let x_off = eu_off + m * (big_n + 1);
        let u_off = x_off + n * big_n;
        let y_off = u_off + m * (big_n + 1);
        let tx_off = y_off + p * big_n;
        let (q, qa, n_aux) = artref.unwrap_or((0, 0, 0));
        let tu_off = tx_off + n * q;
        let ty_off = tu_off + m * q;
        let aux_off = ty_off + p * qa;
        let n_free = aux_off + n_aux;
        let pex_off = 0;
        let peu_off = pex_off + n * (ndx + 1);
        let px_off = peu_off + m * ndu;
        let py_off = px_off + n * nn;
        let pu_off = py_off + p * nn;
        let n_pinned = pu_off + m * nn;
        Self {
            n,
            m,
            p,
            horizon,
            nn,
            ndx,
            ndu,
            q,
            qa,
            n_aux,
            artref: artref.is_some(),
            ex_off,
            eu_off,
            x_off,
            u_off,
            y_off,
            tx_off,
            tu_off,
            ty_off,
            aux_off,
            n_free,
            pex_off,
            peu_off,
            px_off,
            py_off,
            pu_off,
            n_pinned,
        }
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_pinned(&self) -> usize {
        self.n_pinned
    }

    pub fn dim(&self) -> usize {
        self.n_free + self.n_pinned
    }

    fn k(&self) -> isize {
        self.horizon as isize
    }

    /// Combined index of the first component of `e_x(k)`, `k` in `[-n_dx, N]`.
    pub fn ex(&self, k: isize) -> usize {
        assert!(k >= -(self.ndx as isize) && k <= self.k(), "e_x index {k}");
        if k >= 1 {
            self.ex_off + (k as usize - 1) * self.n
        } else {
            self.n_free + self.pex_off + (-k) as usize * self.n
        }
    }

    /// `k` in `[-n_du, N]`.
    pub fn eu(&self, k: isize) -> usize {
        assert!(k >= -(self.ndu as isize) && k <= self.k(), "e_u index {k}");
        if k >= 0 {
            self.eu_off + k as usize * self.m
        } else {
            self.n_free + self.peu_off + (-k - 1) as usize * self.m
        }
    }

    /// `k` in `[-(n_n - 1), N]`.
    pub fn x(&self, k: isize) -> usize {
        assert!(k > -(self.nn as isize) && k <= self.k(), "x index {k}");
        if k >= 1 {
            self.x_off + (k as usize - 1) * self.n
        } else {
            self.n_free + self.px_off + (-k) as usize * self.n
        }
    }

    /// `k` in `[-(n_n - 1), N]`.
    pub fn y(&self, k: isize) -> usize {
        assert!(k > -(self.nn as isize) && k <= self.k(), "y index {k}");
        if k >= 1 {
            self.y_off + (k as usize - 1) * self.p
        } else {
            self.n_free + self.py_off + (-k) as usize * self.p
        }
    }

    /// `k` in `[-n_n, N]`.
    pub fn u(&self, k: isize) -> usize {
        assert!(k >= -(self.nn as isize) && k <= self.k(), "u index {k}");
        if k >= 0 {
            self.u_off + k as usize * self.m
        } else {
            self.n_free + self.pu_off + (-k - 1) as usize * self.m
        }
    }

    pub fn theta_x(&self) -> usize {
        self.tx_off
    }

    pub fn theta_u(&self) -> usize {
        self.tu_off
    }

    pub fn theta_y(&self) -> usize {
        self.ty_off
    }

    pub fn aux(&self) -> usize {
        self.aux_off
    }

    /// Names of the free variables, for dumps.
    pub fn free_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.n_free];
        let n = self.k();
        let mut put = |base: usize, len: usize, label: String| {
            for i in 0..len {
                names[base + i] = format!("{label}[{i}]");
            }
        };
        for k in 1..=n {
            put(self.ex(k), self.n, format!("ex{k}"));
            put(self.x(k), self.n, format!("x{k}"));
            put(self.y(k), self.p, format!("y{k}"));
        }
        for k in 0..=n {
            put(self.eu(k), self.m, format!("eu{k}"));
            put(self.u(k), self.m, format!("u{k}"));
        }
        if self.artref {
            put(self.tx_off, self.n * self.q, "theta_x".into());
            put(self.tu_off, self.m * self.q, "theta_u".into());
            put(self.ty_off, self.p * self.qa, "theta_y".into());
            put(self.aux_off, self.n_aux, "aux".into());
        }
        names
    }
}

/// Sequence indexed by a signed time offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub first: isize,
    pub values: Vec<Vector>,
}

impl Series {
    pub fn get(&self, k: isize) -> &Vector {
        &self.values[(k - self.first) as usize]
    }

    pub fn last(&self) -> isize {
        self.first + self.values.len() as isize - 1
    }

    fn read(z: &Vector, first: isize, last: isize, dim: usize, index: impl Fn(isize) -> usize) -> Self {
        Self { first, values: (first..=last).map(|k| z.rows(index(k), dim).into_owned()).collect() }
    }

    fn write(&self, z: &mut Vector, index: impl Fn(isize) -> usize) {
        for (i, v) in self.values.iter().enumerate() {
            z.rows_mut(index(self.first + i as isize), v.len()).copy_from(v);
        }
    }
}

/// Full predicted trajectory over the horizon including the pinned history.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub ex: Series,
    pub eu: Series,
    pub x: Series,
    pub y: Series,
    pub u: Series,
    pub theta: Option<ArtificialReferenceParam>,
    pub aux: Vector,
}

impl Layout {
    pub fn decode(&self, z: &Vector) -> Trajectory {
        assert_eq!(z.len(), self.dim());
        let n = self.k();
        let theta = self.artref.then(|| ArtificialReferenceParam {
            theta_x: z.rows(self.tx_off, self.n * self.q).into_owned(),
            theta_u: z.rows(self.tu_off, self.m * self.q).into_owned(),
            theta_y: z.rows(self.ty_off, self.p * self.qa).into_owned(),
        });
        Trajectory {
            ex: Series::read(z, -(self.ndx as isize), n, self.n, |k| self.ex(k)),
            eu: Series::read(z, -(self.ndu as isize), n, self.m, |k| self.eu(k)),
            x: Series::read(z, 1 - self.nn as isize, n, self.n, |k| self.x(k)),
            y: Series::read(z, 1 - self.nn as isize, n, self.p, |k| self.y(k)),
            u: Series::read(z, -(self.nn as isize), n, self.m, |k| self.u(k)),
            theta,
            aux: z.rows(self.aux_off, self.n_aux).into_owned(),
        }
    }

    pub fn encode(&self, t: &Trajectory) -> Vector {
        let mut z = Vector::zeros(self.dim());
        t.ex.write(&mut z, |k| self.ex(k));
        t.eu.write(&mut z, |k| self.eu(k));
        t.x.write(&mut z, |k| self.x(k));
        t.y.write(&mut z, |k| self.y(k));
        t.u.write(&mut z, |k| self.u(k));
        if let Some(th) = &t.theta {
            z.rows_mut(self.tx_off, th.theta_x.len()).copy_from(&th.theta_x);
            z.rows_mut(self.tu_off, th.theta_u.len()).copy_from(&th.theta_u);
            z.rows_mut(self.ty_off, th.theta_y.len()).copy_from(&th.theta_y);
        }
        z.rows_mut(self.aux_off, self.n_aux).copy_from(&t.aux);
        z
    }

    pub fn join(&self, free: &Vector, pinned: &Vector) -> Vector {
        let mut z = Vector::zeros(self.dim());
        z.rows_mut(0, self.n_free).copy_from(free);
        z.rows_mut(self.n_free, self.n_pinned).copy_from(pinned);
        z
    }

    pub fn split(&self, z: &Vector) -> (Vector, Vector) {
        (z.rows(0, self.n_free).into_owned(), z.rows(self.n_free, self.n_pinned).into_owned())
    }
}
