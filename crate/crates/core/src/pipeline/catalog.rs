use serde::Serialize;

/// One property column of the dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertySpec {
    pub symbol: &'static str,
    pub name: &'static str,
    pub unit: &'static str,
    /// Expected range `[lo, hi]` in original units.
    pub lo: f64,
    pub hi: f64,
    /// Number of labelled homopolymers in the reference dataset.
    pub count: usize,
    /// Targets are trained as `log10(value)`.
    pub log_scale: bool,
}

impl PropertySpec {
    pub fn in_range(&self, value: f64) -> bool {
        (self.lo..=self.hi).contains(&value)
    }

    pub fn range_label(&self) -> String {
        format!("[{}, {}]", fmt_bound(self.lo), fmt_bound(self.hi))
    }
}

fn fmt_bound(x: f64) -> String {
    if x != 0.0 && (x.abs() >= 1e5 || x.abs() < 1e-3) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyCatalog {
    pub properties: Vec<PropertySpec>,
}

macro_rules! prop {
    ($sym:literal, $name:literal, $unit:literal, $lo:expr, $hi:expr, $count:literal, $log:literal) => {
        PropertySpec { symbol: $sym, name: $name, unit: $unit, lo: $lo, hi: $hi, count: $count, log_scale: $log }
    };
}

impl PropertyCatalog {
    /// The 22 homopolymer properties.
    pub fn standard() -> Self {
        Self {
            properties: vec![
                prop!("Tg", "glass transition temperature", "°C", -120.0, 500.0, 6769, false),
                prop!("Tm", "melting temperature", "°C", -55.0, 580.0, 3349, false),
                prop!("Td", "thermal decomposition temperature", "°C", 18.0, 850.0, 5347, false),
                prop!("Eat", "atomization energy", "eV/atom", -7.0, -5.0, 390, false),
                prop!("Xc", "crystallization tendency", "%", 0.1, 100.0, 432, false),
                prop!("rho", "density", "g/cm^3", 0.1, 3.0, 1520, false),
                prop!("Egc", "band gap (chain)", "eV", 0.02, 10.0, 3380, false),
                prop!("Egb", "band gap (bulk)", "eV", 0.4, 10.0, 561, false),
                prop!("Eea", "electron affinity", "eV", 0.4, 5.0, 368, false),
                prop!("Ei", "ionization energy", "eV", 3.5, 10.0, 370, false),
                prop!("nc", "refractive index", "-", 1.0, 3.0, 382, false),
                prop!("sigma", "conductivity", "S/cm", 0.0, 1e7, 382, true),
                prop!("E", "Young's modulus", "GPa", 2e-5, 6.0, 938, true),
                prop!("sigma_y", "tensile strength at yield", "GPa", 3e-8, 0.4, 244, true),
                prop!("sigma_b", "tensile strength at break", "GPa", 8e-5, 0.2, 975, true),
                prop!("eps_b", "elongation at break", "-", 0.6, 1000.0, 1015, true),
                prop!("mu_O2", "O2 gas permeability", "barrer", 3e-4, 1.9e4, 695, true),
                prop!("mu_CO2", "CO2 gas permeability", "barrer", 1e-3, 4.7e4, 644, true),
                prop!("mu_N2", "N2 gas permeability", "barrer", 1e-4, 1.7e4, 678, true),
                prop!("mu_H2", "H2 gas permeability", "barrer", 0.02, 3.7e4, 461, true),
                prop!("mu_He", "He gas permeability", "barrer", 0.05, 1.8e4, 408, true),
                prop!("mu_CH4", "CH4 gas permeability", "barrer", 4e-4, 3.5e4, 331, true),
            ],
        }
    }

    pub fn get(&self, symbol: &str) -> Option<&PropertySpec> {
        self.properties.iter().find(|p| p.symbol == symbol)
    }

    pub fn symbols(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.properties.iter().map(|p| p.symbol)
    }

    pub fn len(&self) -> usize {
        self.properties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.properties.is_empty()
    }
}

impl Default for PropertyCatalog {
    fn default() -> Self {
        Self::standard()
    }
}
