"""Two-type Moran model with multi-order selection and its ancestral processes."""
