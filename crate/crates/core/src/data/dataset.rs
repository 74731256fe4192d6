use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Traditional,
    OneShot,
    CrossDomain,
}

/// A real photograph and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Photo {
    pub image: Image,
    pub label: usize,
}

/// The `(image, label, template)` triple.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSample<'a> {
    pub image: &'a Image,
    pub label: usize,
    pub template: &'a Image,
}

/// Counts photograph reads per `(split, class)`. Template reads are not
/// recorded; they are the support set by definition.
#[derive(Debug, Default)]
pub struct AccessLog {
    reads: Mutex<BTreeMap<(Split, usize), usize>>,
}

impl AccessLog {
    fn record(&self, split: Split, label: usize) {
        let mut reads = self.reads.lock().expect("access log poisoned");
        *reads.entry((split, label)).or_default() += 1;
    }

    pub fn snapshot(&self) -> BTreeMap<(Split, usize), usize> {
        self.reads.lock().expect("access log poisoned").clone()
    }

    pub fn reads(&self, split: Split) -> usize {
        self.snapshot()
            .iter()
            .filter(|((s, _), _)| *s == split)
            .map(|(_, n)| n)
            .sum()
    }

    /// Reads of photographs whose class is in `classes`, from any split.
    pub fn reads_of_classes(&self, classes: &BTreeSet<usize>) -> usize {
        self.snapshot()
            .iter()
            .filter(|((_, y), _)| classes.contains(y))
            .map(|(_, n)| n)
            .sum()
    }

    pub fn clear(&self) {
        self.reads.lock().expect("access log poisoned").clear();
    }
}

/// Classes with one template each plus train and test photographs.
#[derive(Debug)]
pub struct Dataset {
    pub name: String,
    class_names: Vec<String>,
    templates: Vec<Image>,
    train: Vec<Photo>,
    test: Vec<Photo>,
    protocol: Protocol,
    access: AccessLog,
}

impl Clone for Dataset {
    /// Copies content; the clone starts with an empty access log.
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            class_names: self.class_names.clone(),
            templates: self.templates.clone(),
            train: self.train.clone(),
            test: self.test.clone(),
            protocol: self.protocol,
            access: AccessLog::default(),
        }
    }
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        class_names: Vec<String>,
        templates: Vec<Image>,
        train: Vec<Photo>,
        test: Vec<Photo>,
        protocol: Protocol,
    ) -> Result<Self> {
        if class_names.len() != templates.len() {
            return Err(Error::InvalidArgument(format!(
                "{} class names for {} templates",
                class_names.len(),
                templates.len()
            )));
        }
        let first = templates
            .first()
            .ok_or_else(|| Error::Empty("dataset classes".into()))?;
        let (w, h) = (first.width(), first.height());
        for (name, t) in class_names.iter().zip(&templates) {
            if t.width() != w || t.height() != h {
                return Err(Error::Shape(format!("template of {name} has a different size")));
            }
            if !t.in_unit_range() {
                return Err(Error::InvalidArgument(format!(
                    "template of {name} leaves [0, 1]"
                )));
            }
        }
        for p in train.iter().chain(&test) {
            if p.label >= class_names.len() {
                return Err(Error::InvalidArgument(format!("label {} out of range", p.label)));
            }
            if p.image.width() != w || p.image.height() != h {
                return Err(Error::Shape(format!(
                    "photo of class {} is {}x{}, templates are {w}x{h}",
                    class_names[p.label],
                    p.image.width(),
                    p.image.height()
                )));
            }
        }
        let ds = Self {
            name: name.into(),
            class_names,
            templates,
            train,
            test,
            protocol,
            access: AccessLog::default(),
        };
        if protocol == Protocol::OneShot {
            ds.check_disjoint()?;
        }
        Ok(ds)
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn image_size(&self) -> usize {
        self.templates[0].width()
    }

    pub fn templates(&self) -> &[Image] {
        &self.templates
    }

    pub fn template(&self, label: usize) -> &Image {
        &self.templates[label]
    }

    fn photos(&self, split: Split) -> &[Photo] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self, split: Split) -> usize {
        self.photos(split).len()
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.photos(split).is_empty()
    }

    /// Labels are metadata; reading them does not touch a photograph.
    pub fn label(&self, split: Split, i: usize) -> usize {
        self.photos(split)[i].label
    }

    pub fn labels(&self, split: Split) -> Vec<usize> {
        self.photos(split).iter().map(|p| p.label).collect()
    }

    /// Reads a photograph, recording the access.
    pub fn photo(&self, split: Split, i: usize) -> &Image {
        let p = &self.photos(split)[i];
        self.access.record(split, p.label);
        &p.image
    }

    pub fn sample(&self, split: Split, i: usize) -> LabeledSample<'_> {
        let image = self.photo(split, i);
        let label = self.label(split, i);
        LabeledSample {
            image,
            label,
            template: &self.templates[label],
        }
    }

    pub fn classes_in(&self, split: Split) -> BTreeSet<usize> {
        self.photos(split).iter().map(|p| p.label).collect()
    }

    pub fn access_log(&self) -> &AccessLog {
        &self.access
    }

    /// Errors with the shared classes when train and test overlap.
    pub fn check_disjoint(&self) -> Result<()> {
        let shared: Vec<usize> = self
            .classes_in(Split::Train)
            .intersection(&self.classes_in(Split::Test))
            .copied()
            .collect();
        if shared.is_empty() {
            Ok(())
        } else {
            Err(Error::ClassOverlap(shared))
        }
    }

    /// Byte-level content equality, ignoring the access log.
    pub fn same_content(&self, other: &Dataset) -> bool {
        self.class_names == other.class_names
            && self.templates == other.templates
            && self.train == other.train
            && self.test == other.test
            && self.protocol == other.protocol
    }

    /// Writes `templates/`, `templates.json`, `train/<class>/` and
    /// `test/<class>/` as PNG files.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mkdir(&dir.join("templates"))?;
        let mut map = BTreeMap::new();
        for (name, t) in self.class_names.iter().zip(&self.templates) {
            let rel = format!("templates/{name}.png");
            t.save_png(dir.join(&rel))?;
            map.insert(name.clone(), rel);
        }
        let map_path = dir.join("templates.json");
        std::fs::write(&map_path, serde_json::to_vec_pretty(&map)?)
            .map_err(|e| Error::io(&map_path, e))?;
        for split in [Split::Train, Split::Test] {
            let root = dir.join(split_dir(split));
            mkdir(&root)?;
            for (i, p) in self.photos(split).iter().enumerate() {
                let class_dir = root.join(&self.class_names[p.label]);
                mkdir(&class_dir)?;
                p.image.save_png(class_dir.join(format!("{i:06}.png")))?;
            }
        }
        Ok(())
    }

    /// Reads a directory written by [`Dataset::export`].
    pub fn load_exported(dir: impl AsRef<Path>, image_size: usize, protocol: Protocol) -> Result<Self> {
        let dir = dir.as_ref();
        let map = dir.join("templates.json");
        let train = load_image_folder(dir.join(split_dir(Split::Train)), &map, image_size)?;
        let test = load_image_folder(dir.join(split_dir(Split::Test)), &map, image_size)?;
        Dataset::new(
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            train.class_names,
            train.templates,
            train.photos,
            test.photos,
            protocol,
        )
    }
}

fn split_dir(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

/// Result of scanning one class-per-subfolder directory.
#[derive(Debug, Clone)]
pub struct FolderLoad {
    /// Sorted template-map keys; labels index into this list.
    pub class_names: Vec<String>,
    pub templates: Vec<Image>,
    pub photos: Vec<Photo>,
    /// Files that could not be decoded as images.
    pub skipped: usize,
}

/// Loads `root/<class>/*` photographs with templates from a JSON map
/// `{class_name: path}`; relative paths resolve against the map's folder.
pub fn load_image_folder(
    root: impl AsRef<Path>,
    template_map_path: impl AsRef<Path>,
    image_size: usize,
) -> Result<FolderLoad> {
    let root = root.as_ref();
    let map_path = template_map_path.as_ref();
    let raw = std::fs::read(map_path).map_err(|e| Error::io(map_path, e))?;
    let map: BTreeMap<String, String> = serde_json::from_slice(&raw)?;
    let base = map_path.parent().unwrap_or(Path::new("."));
    let class_names: Vec<String> = map.keys().cloned().collect();
    let templates = map
        .values()
        .map(|rel| Image::load(base.join(rel)).map(|t| t.resize(image_size, image_size)))
        .collect::<Result<Vec<_>>>()?;

    let mut folders: Vec<_> = match std::fs::read_dir(root) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.path())
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(root, e)),
    };
    folders.sort();
    let mut photos = Vec::new();
    let mut skipped = 0;
    for folder in folders {
        let name = folder
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let label = class_names
            .binary_search(&name)
            .map_err(|_| Error::MissingTemplate(name.clone()))?;
        let mut files: Vec<_> = std::fs::read_dir(&folder)
            .map_err(|e| Error::io(&folder, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            match Image::load(&file) {
                Ok(img) => photos.push(Photo {
                    image: img.resize(image_size, image_size),
                    label,
                }),
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    skipped += 1;
                }
            }
        }
    }
    Ok(FolderLoad {
        class_names,
        templates,
        photos,
        skipped,
    })
}
