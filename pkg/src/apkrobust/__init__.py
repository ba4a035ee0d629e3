"""Static analysis of Android packages with obfuscation-aware feature
selection: parse, extract, measure robustness, train, select."""

from .apk import ApkEntry, ApkModel, CertSummary, entry_extension, \
    open_apk, sniff_magic
from .axml import ManifestModel, manifest_to_xml, parse_manifest
from .corpus import (AppRecord, CorpusManifest, DEFAULT_RULE, EXCLUDED,
                     GOODWARE, LABEL_TO_INT, LabelRule, MALWARE, UNLABELED,
                     derive_success_split, label)
from .dex import (DefinedClass, DefinedMethod, DexModel, MethodRef,
                  code_events, parse_dex, write_dex)
from .errors import (BadDexMagic, BadModelFile, EmptyCorpus, EmptyMatrix,
                     EmptyModel, EntryDecompressionFailure, FamilyMismatch,
                     InvalidIndex, InvalidManifest, LengthMismatch,
                     MalformedAxml, MalformedXml, MissingDex, MissingFamily,
                     MissingFamilyMetric, MissingManifest, MissingVtd,
                     ModelTooLarge, NoFamilySelected, NotAZip,
                     SingleClassLabels, SingleClassTraining, ToolkitError,
                     TruncatedDex, UnknownOpcode, UnserializableModel)
from .features import (BINARY_FAMILIES, ExtractionBudget, FAMILIES,
                       RawFeatureSet,
                       extract_adhoc, extract_all, extract_api_functions,
                       extract_components, extract_file_features,
                       extract_opcode_bigrams, extract_permissions,
                       extract_strings, family_kind,
                       load_official_permissions)
from .forest import (ForestModel, TrainConfig, predict, predict_labels,
                     predict_scores, rank_features, train_forest)
from .metrics import (EvalResult, InsensitivityResult, Pair, PairedCorpus,
                      RobustnessReport, discrepancy_topk, eval_metrics,
                      family_persistence, family_tool_overlap,
                      insensitivity, persistence, tool_overlap)
from .obfuscate import (AppPackage, ObfSpec, TECHNIQUES, TOOL_PROFILES,
                        ToolProfile, TransformLog, apply_technique,
                        encrypt_strings, indirect_calls, insert_junk,
                        load_package, obfuscate_apk_bytes, reflectify,
                        rename, serialize_package)
from .selection import (DetectorResult, RobustFeatureSet, SelectionConfig,
                        SelectionReport, build_detector, select_families,
                        truncate_family)
from .synth import (CorpusRecipe, DEFAULT_RECIPE, DexBuilder, build_app,
                    build_manifest, generate_corpus, serialize_min_apk)
from .vectorize import (FeatureMatrix, FeatureVector, Vocabulary,
                        assemble_matrix, build_vocabulary, vectorize)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
