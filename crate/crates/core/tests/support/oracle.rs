//! Literal, line-by-line interpreter of the power-management loop, kept
//! independent of the production controller.

const TABLE: [(i32, f64, f64); 7] = [
    (7, 3.4, 3.6),
    (6, 3.2, 3.4),
    (5, 3.0, 3.2),
    (4, 2.8, 3.0),
    (3, 2.6, 2.8),
    (2, 2.4, 2.6),
    (1, 2.1, 2.4),
];
const MAX: f64 = 3.6;

pub struct Reference {
    light_vec: Vec<f64>,
    volt_vec: Vec<f64>,
    index: u64,
    next_qos: i32,
}

impl Reference {
    // Input: Light-vec(5); Volt-vec(5); light=0; volt=0; index=0
    pub fn new() -> Self {
        Reference {
            light_vec: vec![0.0; 5],
            volt_vec: vec![0.0; 5],
            index: 0,
            next_qos: 1,
        }
    }

    fn based_on_voltage_and_table(volt: f64) -> i32 {
        let v = volt.min(MAX);
        TABLE
            .iter()
            .find(|r| (r.1 <= v && v < r.2) || (r.0 == 7 && v == r.2))
            .unwrap()
            .0
    }

    fn trend(v: &[f64]) -> f64 {
        let mean = v.iter().sum::<f64>() / 5.0;
        let mut num = 0.0;
        for (i, y) in v.iter().enumerate() {
            num += (i as f64 - 2.0) * (y - mean);
        }
        num / 10.0
    }

    /// One pass of the loop body; returns the updated QoS.
    pub fn iterate(&mut self, volt: f64, light: f64) -> i32 {
        let is_max = volt >= MAX - 0.010;
        if self.index == 0 || is_max {
            self.next_qos = Self::based_on_voltage_and_table(volt);
            self.index += 1;
        }
        self.light_vec.remove(0);
        self.light_vec.push(light);
        self.volt_vec.remove(0);
        self.volt_vec.push(volt);
        if light == 0.0 || Self::trend(&self.light_vec) < 0.0 {
            self.next_qos -= 1
        } else {
            self.next_qos += 1
        }
        if Self::trend(&self.volt_vec) <= 0.0 && !is_max {
            self.next_qos -= 1
        } else {
            self.next_qos += 1
        }
        self.next_qos = self.next_qos.clamp(1, 7);
        self.next_qos
    }
}
