//! Reporting helpers for the acceptance suite.

pub struct Criterion {
    id: usize,
    title: &'static str,
    subs: Vec<(String, bool)>,
}

impl Criterion {
    pub fn new(id: usize, title: &'static str) -> Self {
        Criterion {
            id,
            title,
            subs: Vec::new(),
        }
    }

    pub fn sub(&mut self, pass: bool, msg: impl Into<String>) {
        self.subs.push((msg.into(), pass));
    }

    pub fn pass(&self) -> bool {
        !self.subs.is_empty() && self.subs.iter().all(|s| s.1)
    }

    pub fn report(&self) -> bool {
        let ok = self.pass();
        println!(
            "[{}] criterion {}: {}",
            if ok { "PASS" } else { "FAIL" },
            self.id,
            self.title
        );
        for (m, p) in &self.subs {
            println!("    [{}] {m}", if *p { "ok" } else { "FAIL" });
        }
        ok
    }
}
