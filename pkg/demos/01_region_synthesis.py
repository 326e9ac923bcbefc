# # Building the auxiliary view
#
# The auxiliary image is made from fixed-fraction crops of the face, stacked
# top to bottom and resampled to 224x224.

import numpy as np

from fusionfer.regions import EYE, MOUTH, NOSE, ViewComposition, compose_views, crop_region

# A synthetic face: horizontal gradient plus a bright band where the eyes sit.
face = np.tile(np.linspace(0, 200, 224, dtype=np.float64), (224, 1)).astype(np.uint8)
face[85:115, 50:175] = 255
print("face:", face.shape, face.dtype)

# Crop bounds are (row0, row1, col0, col1), half-open.
for spec in (EYE, MOUTH, NOSE):
    print(f"{spec.name.value:6s}", spec.bounds(224, 224), crop_region(face, spec).shape)

# The default composition is eye over mouth.
aux = compose_views(face)
print("eye+mouth view:", aux.shape)

# Any ordered subset works.
three = ViewComposition.from_names(["Eye", "Nose", "Mouth"])
print("eye+nose+mouth view:", compose_views(face, three).shape)

# The bright band lands in the top strip.
rows = np.flatnonzero(aux[:, 112] == 255)
print("bright rows in aux view:", rows.min(), "to", rows.max())
