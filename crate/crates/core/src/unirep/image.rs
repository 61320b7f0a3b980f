use serde::{Deserialize, Serialize};

use super::{TextualizationConfig, UnirepError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectAttr {
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<String>,
}

/// Pre-computed image metadata: a caption for the whole scene and detected
/// objects with their attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub objects: Vec<ObjectAttr>,
}

impl ImageMeta {
    pub fn validate(&self) -> Result<(), UnirepError> {
        if let Some(index) = self.objects.iter().position(|o| o.name.trim().is_empty()) {
            return Err(UnirepError::InvalidImage(format!("object {index} has an empty name")));
        }
        if self.caption.trim().is_empty() && self.objects.is_empty() {
            return Err(UnirepError::InvalidImage(
                "caption may be empty only when objects are present".into(),
            ));
        }
        Ok(())
    }

    /// `<title>. <caption>`, title omitted when absent.
    pub fn global_text(&self) -> String {
        [self.title.as_deref().unwrap_or(""), self.caption.as_str()]
            .into_iter()
            .map(clean)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(". ")
    }

    /// Objects rendered as `<attrs...> <name>` and joined by `; `.
    pub fn local_text(&self) -> String {
        self.objects
            .iter()
            .map(|o| {
                o.attributes
                    .iter()
                    .map(|a| a.trim())
                    .filter(|a| !a.is_empty())
                    .chain(std::iter::once(o.name.trim()))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

// Trailing periods would double up with the splice punctuation.
fn clean(s: &str) -> &str {
    s.trim().trim_end_matches('.').trim_end()
}

/// Splices the global and local descriptions: `<global>. Objects: <local>.`
pub fn textualize_image(meta: &ImageMeta, cfg: &TextualizationConfig) -> Result<String, UnirepError> {
    meta.validate()?;
    if !cfg.use_global && !cfg.use_local {
        return Err(UnirepError::TextualizationDisabled);
    }
    let mut parts = Vec::with_capacity(2);
    if cfg.use_global {
        let global = meta.global_text();
        if !global.is_empty() {
            parts.push(format!("{global}."));
        }
    }
    if cfg.use_local {
        let local = meta.local_text();
        if !local.is_empty() {
            parts.push(format!("Objects: {local}."));
        }
    }
    if parts.is_empty() {
        return Err(UnirepError::EmptyTextualization);
    }
    Ok(parts.join(" "))
}
