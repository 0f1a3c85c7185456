use super::TemporalError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionVocabulary {
    primary: Vec<String>,
    secondary: Vec<String>,
}

impl Default for ActionVocabulary {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            primary: own(&["walking", "standing", "sitting", "running"]),
            secondary: own(&["carrying", "pushing", "pulling", "reading", "none"]),
        }
    }
}

impl ActionVocabulary {
    pub fn new(primary: Vec<String>, secondary: Vec<String>) -> Result<Self, TemporalError> {
        for (name, labels) in [("primary", &primary), ("secondary", &secondary)] {
            if labels.len() < 2 {
                return Err(TemporalError::Vocabulary(format!("{name} vocabulary needs at least 2 labels")));
            }
            let mut sorted: Vec<&String> = labels.iter().collect();
            sorted.sort();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(TemporalError::Vocabulary(format!("{name} labels must be unique")));
            }
        }
        Ok(Self { primary, secondary })
    }

    pub fn primary(&self) -> &[String] {
        &self.primary
    }

    pub fn secondary(&self) -> &[String] {
        &self.secondary
    }

    pub fn n_primary(&self) -> usize {
        self.primary.len()
    }

    pub fn n_secondary(&self) -> usize {
        self.secondary.len()
    }

    pub fn primary_index(&self, label: &str) -> Option<usize> {
        self.primary.iter().position(|l| l == label)
    }

    pub fn secondary_index(&self, label: &str) -> Option<usize> {
        self.secondary.iter().position(|l| l == label)
    }
}
