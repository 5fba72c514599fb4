//! Box domains, grid densities, atomic measures and weighted point clouds.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of user-supplied probability measures.
pub const INPUT_PROB_TOL: f64 = 1e-8;
/// Tolerance on the total mass of internally produced probability measures.
pub const INTERNAL_PROB_TOL: f64 = 1e-12;

/// A box in ℝⁿ, or all of ℝⁿ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    dim: usize,
    bounds: Option<Vec<(f64, f64)>>,
}

impl Domain {
    pub fn bounded(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidInput("domain needs at least one axis".into()));
        }
        for (axis, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!(
                    "axis {axis}: need finite lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Domain { dim: bounds.len(), bounds: Some(bounds) })
    }

    /// The unit cube [0, 1]ⁿ.
    pub fn unit_cube(dim: usize) -> Self {
        Domain { dim, bounds: Some(vec![(0.0, 1.0); dim]) }
    }

    pub fn unbounded(dim: usize) -> Self {
        Domain { dim, bounds: None }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_bounded(&self) -> bool {
        self.bounds.is_some()
    }

    pub fn bounds(&self) -> Option<&[(f64, f64)]> {
        self.bounds.as_deref()
    }

    /// Euclidean diameter of the box; infinite when unbounded.
    pub fn diameter(&self) -> f64 {
        match &self.bounds {
            Some(b) => b.iter().map(|(lo, hi)| (hi - lo) * (hi - lo)).sum::<f64>().sqrt(),
            None => f64::INFINITY,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.bounds {
            Some(b) => x.len() == self.dim && b.iter().zip(x).all(|(&(lo, hi), &v)| v >= lo && v <= hi),
            None => x.len() == self.dim,
        }
    }
}

/// Cell-centred regular grid over a bounded box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    domain: Domain,
    resolution: Vec<usize>,
}

impl Grid {
    pub fn new(domain: Domain, resolution: Vec<usize>) -> Result<Self> {
        if !domain.is_bounded() {
            return Err(Error::UnboundedDomain);
        }
        if resolution.len() != domain.dim() || resolution.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "resolution {resolution:?} does not fit a {}-dimensional domain",
                domain.dim()
            )));
        }
        Ok(Grid { domain, resolution })
    }

    /// Same number of cells along every axis.
    pub fn uniform(domain: Domain, cells: usize) -> Result<Self> {
        let dim = domain.dim();
        Grid::new(domain, vec![cells; dim])
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn widths(&self) -> Vec<f64> {
        let b = self.domain.bounds().expect("grid domains are bounded");
        b.iter().zip(&self.resolution).map(|(&(lo, hi), &r)| (hi - lo) / r as f64).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.widths().iter().product()
    }

    /// Diagonal of one cell, the grid scale `h` used in tolerances.
    pub fn step(&self) -> f64 {
        self.widths().iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Centre of cell `index`; axis 0 varies fastest.
    pub fn cell_center(&self, mut index: usize) -> Vec<f64> {
        let b = self.domain.bounds().expect("grid domains are bounded");
        let mut x = Vec::with_capacity(self.dim());
        for (axis, &r) in self.resolution.iter().enumerate() {
            let i = index % r;
            index /= r;
            let (lo, hi) = b[axis];
            x.push(lo + (i as f64 + 0.5) * (hi - lo) / r as f64);
        }
        x
    }

    /// All cell centres, flattened with stride `dim`.
    pub fn centers(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.dim());
        for i in 0..self.len() {
            out.extend(self.cell_center(i));
        }
        out
    }
}

/// An absolutely continuous measure u·ℒⁿ sampled at cell centres of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
    cell_volume: f64,
}

impl GridDensity {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some((cell, &value)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::NegativeDensity { cell, value });
        }
        let cell_volume = grid.cell_volume();
        Ok(GridDensity { grid, values, cell_volume })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        let cell_volume = grid.cell_volume();
        GridDensity { grid, values: vec![0.0; n], cell_volume }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn domain(&self) -> &Domain {
        self.grid.domain()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn total_mass(&self) -> f64 {
        crate::par::sum(self.values.len(), |i| self.values[i]) * self.cell_volume
    }

    pub fn is_probability(&self, tol: f64) -> bool {
        (self.total_mass() - 1.0).abs() <= tol
    }

    pub fn normalize(&self) -> Result<GridDensity> {
        let mass = self.total_mass();
        if !(mass > 0.0) {
            return Err(Error::ZeroMass);
        }
        let values = self.values.iter().map(|v| v / mass).collect();
        Ok(GridDensity { grid: self.grid.clone(), values, cell_volume: self.cell_volume })
    }

    /// One point per positive cell at its centre, weighted by the cell mass.
    pub fn to_point_cloud(&self) -> Result<WeightedPointCloud> {
        let total = self.total_mass();
        if (total - 1.0).abs() > INPUT_PROB_TOL {
            return Err(Error::NotProbability { total });
        }
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (i, &v) in self.values.iter().enumerate() {
            if v > 0.0 {
                coords.extend(self.grid.cell_center(i));
                weights.push(v * self.cell_volume);
            }
        }
        WeightedPointCloud::new(self.grid.dim(), coords, weights)
    }

    /// Σ |u − v|·vol over the shared grid.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::IncompatibleGrids);
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.cell_volume)
    }

    /// CSV with a three-line header (`dim`, `bounds`, `resolution`) followed by
    /// the cell values, one grid row (fixed higher-axis indices) per line.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let b = self.domain().bounds().expect("grid domains are bounded");
        writeln!(s, "dim,{}", self.grid.dim()).unwrap();
        let bounds: Vec<String> = b.iter().flat_map(|(lo, hi)| [lo.to_string(), hi.to_string()]).collect();
        writeln!(s, "bounds,{}", bounds.join(",")).unwrap();
        let res: Vec<String> = self.grid.resolution().iter().map(|r| r.to_string()).collect();
        writeln!(s, "resolution,{}", res.join(",")).unwrap();
        let row = self.grid.resolution()[0];
        for chunk in self.values.chunks(row) {
            let line: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
            writeln!(s, "{}", line.join(",")).unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<GridDensity> {
        let bad = |msg: &str| Error::InvalidInput(format!("density csv: {msg}"));
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let mut parts = line.split(',').map(str::to_string);
            if parts.next().as_deref() != Some(key) {
                return Err(bad(&format!("expected `{key}` header line")));
            }
            Ok(parts.collect())
        };
        let dim: usize = header("dim")?.first().and_then(|d| d.parse().ok()).ok_or_else(|| bad("dim"))?;
        let b: Vec<f64> = header("bounds")?
            .iter()
            .map(|x| x.parse().map_err(|_| bad("bounds")))
            .collect::<Result<_>>()?;
        let res: Vec<usize> = header("resolution")?
            .iter()
            .map(|x| x.parse().map_err(|_| bad("resolution")))
            .collect::<Result<_>>()?;
        if b.len() != 2 * dim || res.len() != dim {
            return Err(bad("header dimensions disagree"));
        }
        let domain = Domain::bounded(b.chunks(2).map(|c| (c[0], c[1])).collect())?;
        let grid = Grid::new(domain, res)?;
        let mut values = Vec::with_capacity(grid.len());
        for line in lines.filter(|l| !l.trim().is_empty()) {
            for x in line.split(',') {
                values.push(x.trim().parse().map_err(|_| bad("value"))?);
            }
        }
        GridDensity::new(grid, values)
    }

    /// Binary PGM (P5). Axis 0 runs left to right, axis 1 bottom to top;
    /// higher axes are summed out. The maximum value maps to 255.
    pub fn write_pgm(&self, mut out: impl Write) -> Result<()> {
        let res = self.grid.resolution();
        let width = res[0];
        let height = if res.len() > 1 { res[1] } else { 1 };
        let plane = width * height;
        let mut image = vec![0.0f64; plane];
        for (i, v) in self.values.iter().enumerate() {
            image[i % plane] += v;
        }
        let max = image.iter().cloned().fold(0.0, f64::max);
        write!(out, "P5\n{width} {height}\n255\n")?;
        let mut bytes = Vec::with_capacity(plane);
        for row in (0..height).rev() {
            for col in 0..width {
                let v = image[row * width + col];
                let level = if max > 0.0 { (v / max * 255.0).round() } else { 0.0 };
                bytes.push(level.clamp(0.0, 255.0) as u8);
            }
        }
        out.write_all(&bytes)?;
        Ok(())
    }
}

/// One atom of an atomic measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: Vec<f64>,
    pub mass: f64,
}

/// ν = Σ aᵢ δ_{xᵢ} with positive masses at distinct points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

impl AtomicMeasure {
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyCloud);
        }
        for a in &atoms {
            if a.point.len() != dim || a.point.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("atom point {:?} is not a finite {dim}-vector", a.point)));
            }
            if !(a.mass > 0.0) || !a.mass.is_finite() {
                return Err(Error::NonpositiveMass { mass: a.mass });
            }
        }
        for i in 0..atoms.len() {
            for j in 0..i {
                if atoms[i].point == atoms[j].point {
                    return Err(Error::InvalidInput(format!("atoms {j} and {i} share a point")));
                }
            }
        }
        Ok(AtomicMeasure { dim, atoms })
    }

    /// Builds from parallel point and mass lists.
    pub fn from_parts(dim: usize, points: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        if points.len() != masses.len() {
            return Err(Error::InvalidInput("points and masses differ in length".into()));
        }
        AtomicMeasure::new(dim, points.into_iter().zip(masses).map(|(point, mass)| Atom { point, mass }).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.mass).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn is_probability(&self, tol: f64) -> bool {
        (self.total_mass() - 1.0).abs() <= tol
    }

    pub fn check_inside(&self, domain: &Domain) -> Result<()> {
        match self.atoms.iter().position(|a| !domain.contains(&a.point)) {
            Some(atom) => Err(Error::AtomOutsideDomain { atom }),
            None => Ok(()),
        }
    }

    pub fn to_point_cloud(&self) -> Result<WeightedPointCloud> {
        let coords = self.atoms.iter().flat_map(|a| a.point.iter().copied()).collect();
        WeightedPointCloud::new(self.dim, coords, self.masses())
    }
}

/// Points with positive weights; the carrier for the discrete transport solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPointCloud {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedPointCloud {
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() != dim * weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} coordinates do not describe {} points in dimension {dim}",
                coords.len(),
                weights.len()
            )));
        }
        if let Some(&w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::NonpositiveMass { mass: w });
        }
        Ok(WeightedPointCloud { dim, coords, weights })
    }

    /// Builds from a list of points.
    pub fn from_points(points: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(1);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidInput("points of mixed dimension".into()));
        }
        WeightedPointCloud::new(dim, points.concat(), weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Rescales weights to sum to one.
    pub fn normalized(&self) -> Result<WeightedPointCloud> {
        let t = self.total_mass();
        if !(t > 0.0) {
            return Err(Error::ZeroMass);
        }
        Ok(WeightedPointCloud { dim: self.dim, coords: self.coords.clone(), weights: self.weights.iter().map(|w| w / t).collect() })
    }
}

/// |x − y|^p, exact for p ∈ {1, 2}.
#[inline]
pub fn cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if p == 2.0 {
        sq
    } else if p == 1.0 {
        sq.sqrt()
    } else {
        sq.sqrt().powf(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit(dim: usize, cells: usize) -> Grid {
        Grid::uniform(Domain::unit_cube(dim), cells).unwrap()
    }

    #[test]
    fn total_mass_examples() {
        let d = GridDensity::new(unit(1, 4), vec![1.0; 4]).unwrap();
        assert_relative_eq!(d.total_mass(), 1.0);
        let d = GridDensity::new(unit(1, 2), vec![2.0, 0.0]).unwrap();
        assert_relative_eq!(d.total_mass(), 1.0);
        let d = GridDensity::new(unit(2, 2), vec![4.0, 0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(d.cell_volume(), 0.25);
        assert_relative_eq!(d.total_mass(), 1.0);
    }

    #[test]
    fn rejects_negative_values_and_unbounded_domains() {
        assert!(matches!(
            GridDensity::new(unit(1, 2), vec![1.0, -0.5]),
            Err(Error::NegativeDensity { cell: 1, .. })
        ));
        assert_eq!(Grid::uniform(Domain::unbounded(2), 4).unwrap_err(), Error::UnboundedDomain);
    }

    #[test]
    fn normalize_examples() {
        let d = GridDensity::new(unit(1, 2), vec![2.0, 2.0]).unwrap().normalize().unwrap();
        assert_eq!(d.values(), &[1.0, 1.0]);
        let d = GridDensity::new(unit(1, 2), vec![3.0, 1.0]).unwrap().normalize().unwrap();
        assert_eq!(d.values(), &[1.5, 0.5]);
        let z = GridDensity::new(unit(1, 3), vec![0.0; 3]).unwrap();
        assert_eq!(z.normalize().unwrap_err(), Error::ZeroMass);
    }

    #[test]
    fn point_cloud_examples() {
        let c = GridDensity::new(unit(1, 2), vec![1.0, 1.0]).unwrap().to_point_cloud().unwrap();
        assert_eq!(c.coords(), &[0.25, 0.75]);
        assert_eq!(c.weights(), &[0.5, 0.5]);
        let c = GridDensity::new(unit(1, 2), vec![2.0, 0.0]).unwrap().to_point_cloud().unwrap();
        assert_eq!(c.coords(), &[0.25]);
        assert_eq!(c.weights(), &[1.0]);
        let c = GridDensity::new(unit(2, 2), vec![1.0; 4]).unwrap().to_point_cloud().unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.point(3), &[0.75, 0.75]);
        assert!(c.weights().iter().all(|&w| w == 0.25));
        let bad = GridDensity::new(unit(1, 2), vec![1.0, 0.0]).unwrap();
        assert!(matches!(bad.to_point_cloud(), Err(Error::NotProbability { .. })));
    }

    #[test]
    fn atomic_measure_validation() {
        let ok = AtomicMeasure::from_parts(1, vec![vec![0.2], vec![0.8]], vec![0.5, 0.5]).unwrap();
        assert!(ok.is_probability(INPUT_PROB_TOL));
        assert!(AtomicMeasure::from_parts(1, vec![vec![0.2], vec![0.2]], vec![0.5, 0.5]).is_err());
        assert!(matches!(
            AtomicMeasure::from_parts(1, vec![vec![0.2]], vec![0.0]),
            Err(Error::NonpositiveMass { .. })
        ));
        let outside = AtomicMeasure::from_parts(1, vec![vec![1.5]], vec![1.0]).unwrap();
        assert_eq!(outside.check_inside(&Domain::unit_cube(1)), Err(Error::AtomOutsideDomain { atom: 0 }));
    }

    #[test]
    fn csv_header_layout() {
        let d = GridDensity::new(unit(2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let csv = d.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "dim,2");
        assert_eq!(lines[1], "bounds,0,1,0,1");
        assert_eq!(lines[2], "resolution,2,2");
        assert_eq!(lines[3], "1,2");
        assert_eq!(lines[4], "3,4");
        assert_eq!(GridDensity::from_csv(&csv).unwrap(), d);
    }

    #[test]
    fn pgm_scales_max_to_255() {
        let d = GridDensity::new(unit(2, 2), vec![0.0, 2.0, 1.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        d.write_pgm(&mut buf).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&buf[..header.len()], header);
        // top row is axis-1 index 1: values (1, 0); bottom row (0, 2)
        assert_eq!(&buf[header.len()..], &[128, 0, 0, 255]);
    }

    #[test]
    fn diameter_and_cost() {
        assert_relative_eq!(Domain::unit_cube(2).diameter(), 2f64.sqrt());
        assert_eq!(cost(&[0.0, 0.0], &[3.0, 4.0], 1.0), 5.0);
        assert_eq!(cost(&[0.0, 0.0], &[3.0, 4.0], 2.0), 25.0);
        assert_relative_eq!(cost(&[0.0], &[4.0], 1.5), 8.0, max_relative = 1e-15);
    }
}
